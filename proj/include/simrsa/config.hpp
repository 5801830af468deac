#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "simrsa/backend.hpp"
#include "simrsa/cohort.hpp"
#include "simrsa/corpus.hpp"
#include "simrsa/error.hpp"
#include "simrsa/version.hpp"

namespace simrsa {

/// Stock cohort lists: eight surnames crossed with three honorifics.
inline const std::vector<std::string>& default_surnames() {
  static const std::vector<std::string> names = {"Snyder", "Smalls",       "Rodriguez", "Olson",
                                                 "Nguyen", "Kim",          "Jeanbaptiste", "Garcia"};
  return names;
}

inline const std::vector<std::string>& default_honorifics() {
  static const std::vector<std::string> honorifics = {"Ms.", "Mr.", "Dr."};
  return honorifics;
}

struct CohortSpec {
  std::vector<std::string> surnames = default_surnames();
  std::vector<std::string> honorifics = default_honorifics();
  std::optional<int> anonymous_repeats;
};

struct SyntheticLatentSpec {
  enum class Kind { random, file };
  Kind kind = Kind::random;
  std::uint64_t seed = 7;
  std::filesystem::path path;  // kind == file
};

struct SyntheticSpec {
  SyntheticLatentSpec latent;
  double persona_offset_scale = 0.0;
  double noise_scale = 0.0;
  double noncompliance_rate = 0.0;
  double bimodal_push = 0.0;
};

struct TemplatePaths {
  std::optional<std::filesystem::path> intro;
  std::optional<std::filesystem::path> trial;
  std::optional<std::filesystem::path> description;
};

/// One experiment definition, parsed from a single JSON document. The raw
/// document is kept verbatim for the run manifest. Validation happens before
/// any network traffic.
struct ExperimentConfig {
  int version = 1;
  std::string name = "experiment";
  std::filesystem::path stimulus_file;
  std::optional<std::filesystem::path> image_root;
  std::string image_dataset;  // image tasks: which image column to use
  TaskKind task = TaskKind::word_word;
  PairMode pair_mode = PairMode::ordered_with_diagonal;
  std::uint64_t base_seed = 0;
  std::vector<double> temperatures = {1.0};
  std::filesystem::path output_dir;
  CohortSpec cohort;
  BackendConfig backend;
  SyntheticSpec synthetic;
  TemplatePaths templates;
  std::optional<std::filesystem::path> prices_file;
  /// Extra class-string -> canonical-category mappings, merged over the
  /// defaults, so corpora with other spellings load without code changes.
  CategoryAliases category_aliases = default_category_aliases();

  nlohmann::json raw;  // the document as given, for the manifest
};

namespace config_detail {

inline void require_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in " + where);
}

inline PairMode parse_pair_mode(const std::string& s) {
  if (s == "ordered_with_diagonal") return PairMode::ordered_with_diagonal;
  if (s == "unordered_no_diagonal") return PairMode::unordered_no_diagonal;
  throw ConfigError("unknown pair_mode: " + s);
}

}  // namespace config_detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  using config_detail::require_keys;
  require_keys(j, {"version", "name", "stimulus_file", "image_root", "image_dataset", "task",
                   "pair_mode", "base_seed", "temperatures", "output_dir", "cohort", "backend",
                   "synthetic", "templates", "prices_file", "category_aliases"},
               "config");

  ExperimentConfig cfg;
  cfg.raw = j;
  cfg.version = j.value("version", 1);
  if (cfg.version != 1) throw ConfigError("unsupported config version " + std::to_string(cfg.version));
  cfg.name = j.value("name", std::string("experiment"));

  if (!j.contains("stimulus_file")) throw ConfigError("config: stimulus_file is required");
  cfg.stimulus_file = j.at("stimulus_file").get<std::string>();
  if (j.contains("image_root") && !j.at("image_root").is_null())
    cfg.image_root = std::filesystem::path(j.at("image_root").get<std::string>());
  cfg.image_dataset = j.value("image_dataset", std::string{});

  const std::string task_name = j.value("task", std::string("word_word"));
  const auto task = task_from_string(task_name);
  if (!task) throw ConfigError("unknown task: " + task_name);
  cfg.task = *task;

  cfg.pair_mode = config_detail::parse_pair_mode(
      j.value("pair_mode", std::string("ordered_with_diagonal")));
  cfg.base_seed = j.value("base_seed", 0ull);

  if (j.contains("temperatures")) {
    cfg.temperatures = j.at("temperatures").get<std::vector<double>>();
    if (cfg.temperatures.empty()) throw ConfigError("config: temperatures must be non-empty");
    for (double t : cfg.temperatures)
      if (t < 0.0) throw ConfigError("config: temperature must be >= 0");
  }

  if (!j.contains("output_dir")) throw ConfigError("config: output_dir is required");
  cfg.output_dir = j.at("output_dir").get<std::string>();

  if (j.contains("cohort")) {
    const auto& c = j.at("cohort");
    require_keys(c, {"surnames", "honorifics", "anonymous_repeats"}, "cohort");
    const bool has_names = c.contains("surnames") || c.contains("honorifics");
    if (c.contains("anonymous_repeats") && !c.at("anonymous_repeats").is_null()) {
      if (has_names)
        throw ConfigError("cohort: give either name lists or anonymous_repeats, not both");
      cfg.cohort.anonymous_repeats = c.at("anonymous_repeats").get<int>();
      cfg.cohort.surnames.clear();
      cfg.cohort.honorifics.clear();
    } else if (has_names) {
      cfg.cohort.surnames = c.value("surnames", default_surnames());
      cfg.cohort.honorifics = c.value("honorifics", default_honorifics());
    }
  }

  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    require_keys(b,
                 {"kind", "endpoint", "model", "api_key_env", "api_key_header", "temperature",
                  "max_tokens", "timeout_ms", "max_retries", "parallel_participants",
                  "backoff_base_ms", "backoff_cap_ms", "full_history"},
                 "backend");
    const std::string kind = b.value("kind", std::string("synthetic"));
    if (kind == "http")
      cfg.backend.kind = BackendConfig::Kind::http;
    else if (kind == "synthetic")
      cfg.backend.kind = BackendConfig::Kind::synthetic;
    else
      throw ConfigError("unknown backend kind: " + kind);
    cfg.backend.endpoint = b.value("endpoint", std::string{});
    cfg.backend.model = b.value("model", std::string("synthetic-rater"));
    cfg.backend.api_key_env = b.value("api_key_env", std::string("OPENAI_API_KEY"));
    cfg.backend.api_key_header = b.value("api_key_header", std::string("Authorization"));
    cfg.backend.temperature = b.value("temperature", 1.0);
    if (b.contains("max_tokens") && !b.at("max_tokens").is_null())
      cfg.backend.max_tokens = b.at("max_tokens").get<int>();
    cfg.backend.timeout = std::chrono::milliseconds(b.value("timeout_ms", 60000));
    cfg.backend.max_retries = b.value("max_retries", 5);
    cfg.backend.parallel_participants = b.value("parallel_participants", 1);
    cfg.backend.backoff_base = std::chrono::milliseconds(b.value("backoff_base_ms", 1000));
    cfg.backend.backoff_cap = std::chrono::milliseconds(b.value("backoff_cap_ms", 60000));
    cfg.backend.full_history = b.value("full_history", false);
  }

  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    require_keys(s,
                 {"latent", "persona_offset_scale", "noise_scale", "noncompliance_rate",
                  "bimodal_push"},
                 "synthetic");
    if (s.contains("latent")) {
      const auto& l = s.at("latent");
      require_keys(l, {"kind", "seed", "path"}, "synthetic.latent");
      const std::string kind = l.value("kind", std::string("random"));
      if (kind == "random") {
        cfg.synthetic.latent.kind = SyntheticLatentSpec::Kind::random;
        cfg.synthetic.latent.seed = l.value("seed", 7ull);
      } else if (kind == "file") {
        cfg.synthetic.latent.kind = SyntheticLatentSpec::Kind::file;
        if (!l.contains("path")) throw ConfigError("synthetic.latent: path required for kind=file");
        cfg.synthetic.latent.path = l.at("path").get<std::string>();
      } else {
        throw ConfigError("unknown synthetic latent kind: " + kind);
      }
    }
    cfg.synthetic.persona_offset_scale = s.value("persona_offset_scale", 0.0);
    cfg.synthetic.noise_scale = s.value("noise_scale", 0.0);
    cfg.synthetic.noncompliance_rate = s.value("noncompliance_rate", 0.0);
    cfg.synthetic.bimodal_push = s.value("bimodal_push", 0.0);
  }

  if (j.contains("templates")) {
    const auto& t = j.at("templates");
    require_keys(t, {"intro", "trial", "description"}, "templates");
    if (t.contains("intro")) cfg.templates.intro = std::filesystem::path(t.at("intro").get<std::string>());
    if (t.contains("trial")) cfg.templates.trial = std::filesystem::path(t.at("trial").get<std::string>());
    if (t.contains("description"))
      cfg.templates.description = std::filesystem::path(t.at("description").get<std::string>());
  }

  if (j.contains("prices_file") && !j.at("prices_file").is_null())
    cfg.prices_file = std::filesystem::path(j.at("prices_file").get<std::string>());

  if (j.contains("category_aliases")) {
    for (const auto& [raw_class, canonical] : j.at("category_aliases").items()) {
      const std::string name = canonical.get<std::string>();
      const auto defaults = default_category_aliases();
      const auto it = defaults.find(name);
      if (it == defaults.end())
        throw ConfigError("category_aliases: unknown canonical category '" + name + "'");
      cfg.category_aliases[raw_class] = it->second;
    }
  }

  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return parse_experiment_config(j);
}

/// Full validation pass (file existence, cohort, backend, templates); throws
/// ConfigError with an explanation. Runs before any network call.
inline void validate_config(const ExperimentConfig& cfg) {
  cfg.backend.validate();
  if (!std::filesystem::exists(cfg.stimulus_file))
    throw ConfigError("stimulus file not found: " + cfg.stimulus_file.string());
  if (cfg.task == TaskKind::image_image || cfg.task == TaskKind::image_description) {
    if (cfg.image_dataset.empty())
      throw ConfigError("image tasks require image_dataset (the image column to use)");
    if (!cfg.image_root) throw ConfigError("image tasks require image_root");
  }
  if (cfg.task == TaskKind::word_sentence_rating || cfg.task == TaskKind::sentence_ranking)
    throw ConfigError("task '" + std::string(to_string(cfg.task)) +
                      "' has no stimulus-table trial source; drive run_participant directly");
  if (cfg.cohort.anonymous_repeats) {
    if (*cfg.cohort.anonymous_repeats < 1)
      throw ConfigError("cohort: anonymous_repeats must be >= 1");
  } else if (cfg.cohort.surnames.empty() || cfg.cohort.honorifics.empty()) {
    throw ConfigError("cohort: empty cross product");
  }
  if (cfg.backend.kind == BackendConfig::Kind::synthetic) {
    if (cfg.synthetic.latent.kind == SyntheticLatentSpec::Kind::file &&
        !std::filesystem::exists(cfg.synthetic.latent.path))
      throw ConfigError("synthetic latent DSM not found: " + cfg.synthetic.latent.path.string());
  }
  for (const auto& p : {cfg.templates.intro, cfg.templates.trial, cfg.templates.description})
    if (p && !std::filesystem::exists(*p)) throw ConfigError("template file not found: " + p->string());
  if (cfg.prices_file && !std::filesystem::exists(*cfg.prices_file))
    throw ConfigError("prices file not found: " + cfg.prices_file->string());
}

/// Loads the effective prompt template: task defaults overridden by any
/// configured resource files.
inline PromptTemplate resolve_template(const ExperimentConfig& cfg) {
  PromptTemplate tmpl = default_template(cfg.task);
  if (cfg.templates.intro) tmpl.intro_text = load_template_file(*cfg.templates.intro);
  if (cfg.templates.trial) tmpl.trial_text = load_template_file(*cfg.templates.trial);
  if (cfg.templates.description) tmpl.description_text = load_template_file(*cfg.templates.description);
  return tmpl;
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct ParticipantStatus {
  std::string key;
  std::string transcript;  // relative to the run directory
  bool completed = false;
  long records = 0;
  long ok_records = 0;
  long new_requests = 0;
  std::string error;
  ParticipantUsage usage;  // over the whole transcript, not just this session
};

struct TemperatureRun {
  double temperature = 1.0;
  std::string dir;  // relative to output_dir
  std::vector<ParticipantStatus> participants;
};

struct RunManifest {
  std::string tool_version = std::string(kToolName) + " " + kToolVersion;
  nlohmann::json config;
  std::vector<std::string> labels;
  std::vector<TemperatureRun> runs;
  std::string started_at;
  std::string finished_at;

  nlohmann::json to_json(const std::filesystem::path& output_dir) const {
    nlohmann::json j;
    j["tool_version"] = tool_version;
    j["config"] = config;
    j["labels"] = labels;
    auto& runs_json = j["runs"] = nlohmann::json::array();
    std::string hash_input = config.dump();
    for (const auto& l : labels) hash_input += "|" + l;
    ParticipantUsage totals;
    for (const auto& run : runs) {
      nlohmann::json r{{"temperature", run.temperature}, {"dir", run.dir}};
      auto& parts = r["participants"] = nlohmann::json::array();
      for (const auto& p : run.participants) {
        nlohmann::json pj{{"key", p.key},
                          {"transcript", p.transcript},
                          {"completed", p.completed},
                          {"records", p.records},
                          {"ok_records", p.ok_records},
                          {"new_requests", p.new_requests},
                          {"usage",
                           {{"requests", p.usage.requests},
                            {"prompt_tokens", p.usage.tokens.prompt_tokens},
                            {"completion_tokens", p.usage.tokens.completion_tokens},
                            {"wall_ms", p.usage.wall_ms},
                            {"cost", p.usage.cost}}}};
        if (!p.error.empty()) pj["error"] = p.error;
        parts.push_back(pj);
        totals.tokens += p.usage.tokens;
        totals.wall_ms += p.usage.wall_ms;
        totals.requests += p.usage.requests;
        totals.cost += p.usage.cost;
        const auto path = output_dir / run.dir / p.transcript;
        std::ifstream in(path, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        hash_input += "|" + run.dir + "/" + p.transcript + ":" + stable_digest_hex(content);
      }
      runs_json.push_back(r);
    }
    j["usage_totals"] = {{"requests", totals.requests},
                         {"prompt_tokens", totals.tokens.prompt_tokens},
                         {"completion_tokens", totals.tokens.completion_tokens},
                         {"wall_ms", totals.wall_ms},
                         {"cost", totals.cost}};
    j["manifest_hash"] = stable_digest_hex(hash_input);
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    return j;
  }
};

/// Atomic manifest update: write to a temp file, then rename over the target.
inline void save_manifest(const RunManifest& manifest, const std::filesystem::path& output_dir) {
  const auto path = output_dir / "manifest.json";
  const auto tmp = output_dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write manifest: " + tmp.string());
    out << manifest.to_json(output_dir).dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace simrsa
