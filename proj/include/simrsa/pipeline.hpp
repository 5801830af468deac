#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "simrsa/backend.hpp"
#include "simrsa/baseline.hpp"
#include "simrsa/config.hpp"
#include "simrsa/corpus.hpp"
#include "simrsa/dsm.hpp"
#include "simrsa/error.hpp"
#include "simrsa/image.hpp"
#include "simrsa/stats.hpp"
#include "simrsa/svg.hpp"
#include "simrsa/tsne.hpp"

namespace simrsa {
namespace pipeline_detail {

inline std::string iso_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

inline std::string format_temperature(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", t);
  return buf;
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace pipeline_detail

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunOutcome {
  int exit_code = 0;  // 0 complete, 1 partial, 2 config error (thrown as ConfigError)
  RunManifest manifest;
  std::filesystem::path output_dir;
  StimulusSet stimuli;
};

/// Executes the configured experiment: for every temperature x identity,
/// shuffle, run, persist. Resumable; a rerun over a finished output directory
/// sends nothing new.
inline RunOutcome cmd_run(const ExperimentConfig& cfg) {
  validate_config(cfg);

  StimulusSet set = load_stimulus_set(cfg.stimulus_file, std::nullopt, cfg.category_aliases);
  const bool image_task = cfg.task == TaskKind::image_image || cfg.task == TaskKind::image_description;
  if (image_task) {
    set = with_image(set, cfg.image_dataset);
    if (set.items.empty())
      throw ConfigError("no stimuli carry images for dataset '" + cfg.image_dataset + "'");
    std::string missing;
    for (const auto& s : set.items) {
      const auto full = *cfg.image_root / s.image_refs.at(cfg.image_dataset);
      if (!std::filesystem::exists(full)) missing += "\n  " + full.string();
    }
    if (!missing.empty()) throw ConfigError("missing image files:" + missing);
  }

  const auto identities = build_cohort(cfg.cohort.surnames, cfg.cohort.honorifics,
                                       cfg.cohort.anonymous_repeats, cfg.base_seed);
  const PromptTemplate tmpl = resolve_template(cfg);

  std::optional<PriceTable> prices;
  if (cfg.prices_file) prices = PriceTable::load(*cfg.prices_file);

  SyntheticRaterConfig synth;
  if (cfg.backend.kind == BackendConfig::Kind::synthetic) {
    if (cfg.synthetic.latent.kind == SyntheticLatentSpec::Kind::random) {
      synth.latent = random_latent_dsm(set.labels(), cfg.synthetic.latent.seed);
    } else {
      synth.latent = detail::reindex(read_dsm_csv(cfg.synthetic.latent.path), set.labels());
    }
    synth.persona_offset_scale = cfg.synthetic.persona_offset_scale;
    synth.noise_scale = cfg.synthetic.noise_scale;
    synth.noncompliance_rate = cfg.synthetic.noncompliance_rate;
    synth.bimodal_push = cfg.synthetic.bimodal_push;
    synth.validate();
  }

  std::filesystem::create_directories(cfg.output_dir);

  RunOutcome outcome;
  outcome.output_dir = cfg.output_dir;
  outcome.stimuli = set;
  outcome.manifest.config = cfg.raw;
  outcome.manifest.labels = set.labels();
  outcome.manifest.started_at = pipeline_detail::iso_now();

  if (cfg.backend.kind == BackendConfig::Kind::synthetic)
    write_dsm_csv(synth.latent, cfg.output_dir / "latent.csv");

  ImageProvider image_provider;
  if (image_task) {
    const auto root = *cfg.image_root;
    const auto dataset = cfg.image_dataset;
    image_provider = [root, dataset](const Stimulus& s) {
      const auto encoded = encode_image(root / s.image_refs.at(dataset));
      return ImageRef{s.id, encoded.data_url};
    };
  }

  UsageLedger ledger;
  std::mutex manifest_mutex;
  bool all_completed = true;

  for (double temperature : cfg.temperatures) {
    outcome.manifest.runs.emplace_back();
    TemperatureRun& run = outcome.manifest.runs.back();
    run.temperature = temperature;
    run.dir = "temp_" + pipeline_detail::format_temperature(temperature);
    const auto run_dir = cfg.output_dir / run.dir;
    std::filesystem::create_directories(run_dir);
    run.participants.resize(identities.size());
    for (std::size_t i = 0; i < identities.size(); ++i) {
      run.participants[i].key = identities[i].participant_key;
      run.participants[i].transcript = identities[i].participant_key + ".jsonl";
    }

    {
      nlohmann::json rj{{"temperature", temperature}, {"labels", set.labels()}, {"task", to_string(cfg.task)}};
      auto& parts = rj["participants"] = nlohmann::json::array();
      for (const auto& id : identities)
        parts.push_back({{"key", id.participant_key}, {"transcript", id.participant_key + ".jsonl"}});
      std::ofstream out(run_dir / "run.json");
      out << rj.dump(2) << '\n';
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        const std::size_t idx = next.fetch_add(1);
        if (idx >= identities.size()) return;
        const Identity& identity = identities[idx];

        ParticipantStatus status;
        status.key = identity.participant_key;
        status.transcript = identity.participant_key + ".jsonl";

        try {
          std::unique_ptr<ChatBackend> backend;
          if (cfg.backend.kind == BackendConfig::Kind::synthetic) {
            backend = std::make_unique<SyntheticBackend>(synth, cfg.backend.model);
          } else {
            BackendConfig bc = cfg.backend;
            bc.temperature = temperature;
            backend = std::make_unique<HttpBackend>(bc, identity.seed);
          }

          ParticipantRunConfig prc;
          prc.task = cfg.task;
          prc.tmpl = tmpl;
          prc.transcript_path = run_dir / status.transcript;
          prc.full_history = cfg.backend.full_history;
          prc.prices = prices ? &*prices : nullptr;
          prc.model = cfg.backend.model;
          prc.ledger = &ledger;

          const auto plan = plan_trials(cfg.task, set, cfg.pair_mode, identity, cfg.image_dataset,
                                        image_provider);
          const auto result = run_participant(*backend, prc, identity, plan);

          status.completed = result.completed;
          status.records = static_cast<long>(result.records.size());
          status.new_requests = result.new_requests;
          status.error = result.error;
          for (const auto& r : result.records)
            if (r.status == TrialStatus::ok) ++status.ok_records;
          const auto usage =
              usage_from_records(result.records, prices ? &*prices : nullptr, cfg.backend.model);
          if (const auto it = usage.find(identity.participant_key); it != usage.end())
            status.usage = it->second;
        } catch (const std::exception& e) {
          status.completed = false;
          status.error = e.what();
        }

        // atomic manifest update after every participant
        std::lock_guard<std::mutex> lock(manifest_mutex);
        run.participants[idx] = status;
        outcome.manifest.finished_at = pipeline_detail::iso_now();
        save_manifest(outcome.manifest, cfg.output_dir);
      }
    };

    const int n_workers = std::max(1, std::min<int>(cfg.backend.parallel_participants,
                                                    static_cast<int>(identities.size())));
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    for (const auto& p : run.participants)
      if (!p.completed) all_completed = false;
  }

  outcome.manifest.finished_at = pipeline_detail::iso_now();
  save_manifest(outcome.manifest, cfg.output_dir);
  outcome.exit_code = all_completed ? 0 : 1;
  return outcome;
}

// ---------------------------------------------------------------------------
// system loading for analysis
// ---------------------------------------------------------------------------

/// One model system under comparison: a group-level DSM, plus per-participant
/// matrices when the source provides them (run directories, DSM directories).
struct SystemData {
  std::string name;
  std::string source;
  GroupDsm group;
  std::vector<std::string> participant_keys;
  std::vector<Dsm> participant_dsms;
  std::vector<RatingMatrix> participant_ratings;  // empty for DSM-only sources
  std::vector<double> ok_rating_values;           // raw 0-100 ratings for histograms
  std::string manifest_hash;
};

namespace pipeline_detail {

inline SystemData system_from_run_dir(const std::string& name, const std::filesystem::path& dir) {
  std::ifstream in(dir / "run.json");
  if (!in) throw Error("run directory missing run.json: " + dir.string());
  nlohmann::json rj;
  in >> rj;

  SystemData sys;
  sys.name = name;
  sys.source = dir.string();
  StimulusSet set;
  for (const auto& l : rj.at("labels").get<std::vector<std::string>>())
    set.items.push_back(Stimulus{l, l, Category::NaturalObject, {}});

  for (const auto& p : rj.at("participants")) {
    const auto transcript = dir / p.at("transcript").get<std::string>();
    const auto records = read_transcript(transcript);
    if (records.empty()) continue;
    auto ratings = assemble(records, set);
    sys.participant_keys.push_back(p.at("key").get<std::string>());
    sys.participant_dsms.push_back(to_dsm(ratings));
    sys.participant_ratings.push_back(std::move(ratings));
    for (const auto& r : records)
      if (r.kind == RecordKind::rating && r.status == TrialStatus::ok)
        sys.ok_rating_values.push_back(r.parsed.get<double>());
  }
  if (sys.participant_dsms.empty()) throw Error("no transcripts with records in " + dir.string());
  sys.group = group_average(sys.participant_dsms);

  // pick up the manifest hash when the run root is adjacent
  const auto manifest_path = dir.parent_path() / "manifest.json";
  if (std::filesystem::exists(manifest_path)) {
    std::ifstream m(manifest_path);
    nlohmann::json mj;
    m >> mj;
    sys.manifest_hash = mj.value("manifest_hash", std::string{});
  }
  return sys;
}

inline SystemData system_from_dsm_dir(const std::string& name, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    if (entry.path().filename().string().rfind("group", 0) == 0) continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no participant DSM files in " + dir.string());

  SystemData sys;
  sys.name = name;
  sys.source = dir.string();
  for (const auto& f : files) {
    sys.participant_keys.push_back(f.stem().string());
    sys.participant_dsms.push_back(read_dsm_csv(f));
    const auto& d = sys.participant_dsms.back();
    for (std::size_t i = 0; i < d.n(); ++i)
      for (std::size_t j = i + 1; j < d.n(); ++j)
        if (d.at(j, i)) sys.ok_rating_values.push_back(100.0 * (1.0 - *d.at(j, i)));
  }
  sys.group = group_average(sys.participant_dsms);
  return sys;
}

}  // namespace pipeline_detail

/// Loads a system from: a DSM CSV file, a directory of per-participant DSM
/// CSVs, a temperature run directory (run.json + transcripts), or a run root
/// whose manifest holds exactly one temperature run.
inline SystemData load_system(const std::string& name, const std::filesystem::path& path) {
  if (std::filesystem::is_regular_file(path)) {
    SystemData sys;
    sys.name = name;
    sys.source = path.string();
    Dsm d = read_dsm_csv(path);
    const std::size_t n = d.n();
    sys.group.counts.assign(n * n, 0);
    for (std::size_t c = 0; c < n * n; ++c)
      if (d.cells[c]) sys.group.counts[c] = 1;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (d.at(j, i)) sys.ok_rating_values.push_back(100.0 * (1.0 - *d.at(j, i)));
    sys.group.dsm = std::move(d);
    return sys;
  }
  if (!std::filesystem::is_directory(path)) throw Error("system source not found: " + path.string());

  if (std::filesystem::exists(path / "run.json"))
    return pipeline_detail::system_from_run_dir(name, path);

  if (std::filesystem::exists(path / "manifest.json")) {
    std::ifstream in(path / "manifest.json");
    nlohmann::json mj;
    in >> mj;
    const auto& runs = mj.at("runs");
    if (runs.size() != 1)
      throw Error("manifest has " + std::to_string(runs.size()) +
                  " temperature runs; point at one subdirectory of " + path.string());
    return pipeline_detail::system_from_run_dir(name, path / runs.at(0).at("dir").get<std::string>());
  }

  bool any_jsonl = false;
  for (const auto& entry : std::filesystem::directory_iterator(path))
    if (entry.path().extension() == ".jsonl") any_jsonl = true;
  if (any_jsonl)
    throw Error("directory " + path.string() + " has transcripts but no run.json; rerun or add one");

  return pipeline_detail::system_from_dsm_dir(name, path);
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeOptions {
  std::vector<std::pair<std::string, std::string>> systems;  // name -> path
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> stimulus_file;  // enables within/between masks
  std::optional<int> m_comparisons;                    // default C(#systems, 2)
  double alpha = 0.05;
  std::optional<PValueMethod> pvalue_method;
  PermutationSpec permutation;
  int histogram_bins = 20;
  bool run_tsne = false;
  TsneParams tsne_params;
  double fill_value = 0.5;
};

struct AnalyzeResult {
  int exit_code = 0;
  std::vector<AlignmentReport> overall;
  std::vector<AlignmentReport> within;
  std::vector<AlignmentReport> between;
  int unavailable_pairs = 0;
};

/// Default Bonferroni family size: one comparison per unordered system pair.
inline int default_m_comparisons(int n_systems) { return n_systems * (n_systems - 1) / 2; }

namespace pipeline_detail {

inline void write_alignment_csv(const std::filesystem::path& path,
                                const std::vector<AlignmentReport>& reports) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "system_a,system_b,mask,n_pairs,r_s,p_raw,m_comparisons,alpha,significant_bonferroni\n";
  for (const auto& r : reports)
    out << r.system_a << ',' << r.system_b << ',' << r.mask_name.value_or("overall") << ','
        << r.n_pairs_used << ',' << fmt(r.r_s) << ',' << fmt(r.p_raw) << ',' << r.m_comparisons << ','
        << fmt(r.alpha) << ',' << (r.significant_bonferroni ? "yes" : "no") << '\n';
}

inline void write_alignment_matrix_md(const std::filesystem::path& path,
                                      const std::vector<std::string>& names,
                                      const std::vector<AlignmentReport>& reports,
                                      const std::string& title) {
  std::map<std::pair<std::string, std::string>, const AlignmentReport*> by_pair;
  for (const auto& r : reports) {
    by_pair[{r.system_a, r.system_b}] = &r;
    by_pair[{r.system_b, r.system_a}] = &r;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "# " << title << "\n\n";
  out << "r_s per system pair; `*` marks Bonferroni-corrected significance.\n\n";
  out << "| |";
  for (const auto& n : names) out << ' ' << n << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < names.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& row : names) {
    out << "| **" << row << "** |";
    for (const auto& col : names) {
      if (row == col) {
        out << " - |";
        continue;
      }
      const auto it = by_pair.find({row, col});
      if (it == by_pair.end()) {
        out << " n/a |";
        continue;
      }
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3f", it->second->r_s);
      out << ' ' << buf << (it->second->significant_bonferroni ? "\\*" : "") << " |";
    }
    out << '\n';
  }
}

}  // namespace pipeline_detail

/// Full analysis pass over >= 2 systems: all-pairs alignment (overall plus
/// within/between when a categorized stimulus file is supplied), inter-subject
/// reports, ICC per system, rating histograms, heatmaps, and optionally the
/// participant T-SNE scatter.
inline AnalyzeResult cmd_analyze(const AnalyzeOptions& opts) {
  if (opts.systems.size() < 2) throw ConfigError("analyze: need at least 2 systems");
  std::filesystem::create_directories(opts.out_dir);

  std::vector<SystemData> systems;
  systems.reserve(opts.systems.size());
  for (const auto& [name, path] : opts.systems) systems.push_back(load_system(name, path));

  std::optional<std::map<std::string, Category>> categories;
  if (opts.stimulus_file) {
    const auto set = load_stimulus_set(*opts.stimulus_file);
    categories.emplace();
    for (const auto& s : set.items) (*categories)[s.id] = s.category;
  }

  const int n_systems = static_cast<int>(systems.size());
  const int m = opts.m_comparisons.value_or(default_m_comparisons(n_systems));

  AnalyzeResult result;
  std::vector<std::string> unavailable_notes;

  CompareOptions copts;
  copts.alpha = opts.alpha;
  copts.m_comparisons = m;
  copts.method = opts.pvalue_method;
  copts.permutation = opts.permutation;
  if (categories) copts.categories = &*categories;

  for (int a = 0; a < n_systems; ++a) {
    for (int b = a + 1; b < n_systems; ++b) {
      try {
        auto reports = compare_group(systems[a].group, systems[b].group, copts, systems[a].name,
                                     systems[b].name);
        for (auto& r : reports) {
          if (!r.mask_name)
            result.overall.push_back(r);
          else if (*r.mask_name == "within")
            result.within.push_back(r);
          else
            result.between.push_back(r);
        }
      } catch (const Error& e) {
        ++result.unavailable_pairs;
        unavailable_notes.push_back(systems[a].name + " vs " + systems[b].name + ": " + e.what());
      }
    }
  }

  pipeline_detail::write_alignment_csv(opts.out_dir / "alignment_overall.csv", result.overall);
  std::vector<std::string> names;
  for (const auto& s : systems) names.push_back(s.name);
  pipeline_detail::write_alignment_matrix_md(opts.out_dir / "alignment_overall.md", names, result.overall,
                                             "Group-level representational alignment");
  if (categories) {
    pipeline_detail::write_alignment_csv(opts.out_dir / "alignment_within.csv", result.within);
    pipeline_detail::write_alignment_csv(opts.out_dir / "alignment_between.csv", result.between);
    pipeline_detail::write_alignment_matrix_md(opts.out_dir / "alignment_within.md", names, result.within,
                                               "Within-category alignment");
    pipeline_detail::write_alignment_matrix_md(opts.out_dir / "alignment_between.md", names,
                                               result.between, "Between-category alignment");

    // rank-sum contrast of within vs between alignment across system pairs
    if (result.within.size() >= 1 && result.between.size() >= 1) {
      std::vector<double> w_vals, b_vals;
      for (const auto& r : result.within) w_vals.push_back(r.r_s);
      for (const auto& r : result.between) b_vals.push_back(r.r_s);
      const auto test = wilcoxon_ranksum(w_vals, b_vals);
      std::ofstream out(opts.out_dir / "rank_test.csv");
      out << "comparison,n_within,n_between,W,p_two_sided,method\n";
      out << "within_vs_between," << w_vals.size() << ',' << b_vals.size() << ','
          << pipeline_detail::fmt(test.w) << ',' << pipeline_detail::fmt(test.p_two_sided) << ','
          << (test.method == RankTestReport::Method::exact ? "exact" : "normal_approx") << '\n';
    }
  }

  // per-system reports
  std::ofstream icc_out(opts.out_dir / "icc.csv");
  icc_out << "system,icc_single,icc_average,subjects,raters,dropped_pairs,note\n";
  for (const auto& sys : systems) {
    std::string note;
    try {
      IccInput input = !sys.participant_ratings.empty() ? icc_input_from_ratings(sys.participant_ratings)
                       : !sys.participant_dsms.empty()  ? icc_input_from_dsms(sys.participant_dsms)
                                                        : throw Error("single DSM; no raters");
      const auto icc = icc_two_way(input.matrix);
      icc_out << sys.name << ',' << pipeline_detail::fmt(icc.icc_single) << ','
              << pipeline_detail::fmt(icc.icc_average) << ',' << icc.subjects << ',' << icc.raters << ','
              << input.dropped_pairs << ",\n";
    } catch (const Error& e) {
      icc_out << sys.name << ",,,,,," << e.what() << '\n';
    }

    if (sys.participant_dsms.size() >= 2) {
      const auto report = inter_subject(sys.participant_dsms, sys.participant_keys);
      std::ofstream out(opts.out_dir / ("inter_subject_" + sys.name + ".csv"));
      out << "participant,leave_one_out";
      for (const auto& p : report.participants) out << ',' << p;
      out << '\n';
      for (std::size_t i = 0; i < report.participants.size(); ++i) {
        out << report.participants[i] << ',';
        if (report.leave_one_out[i]) out << pipeline_detail::fmt(*report.leave_one_out[i]);
        for (std::size_t j = 0; j < report.participants.size(); ++j) {
          out << ',';
          if (report.pairwise[i][j]) out << pipeline_detail::fmt(*report.pairwise[i][j]);
        }
        out << '\n';
      }
      out << "summary_min," << pipeline_detail::fmt(report.loo_summary.min);
      for (std::size_t j = 0; j < report.participants.size(); ++j) out << ',';
      out << '\n';
      out << "summary_median," << pipeline_detail::fmt(report.loo_summary.med) << ",pairwise_median,"
          << pipeline_detail::fmt(report.pairwise_summary.med) << ",pairwise_min,"
          << pipeline_detail::fmt(report.pairwise_summary.min) << ",pairwise_max,"
          << pipeline_detail::fmt(report.pairwise_summary.max) << '\n';
    }

    if (!sys.participant_ratings.empty()) {
      std::ofstream out(opts.out_dir / ("participants_" + sys.name + ".csv"));
      out << "participant,order_asymmetry\n";
      for (std::size_t i = 0; i < sys.participant_ratings.size(); ++i) {
        const auto asym = order_asymmetry(sys.participant_ratings[i]);
        out << sys.participant_keys[i] << ',';
        if (asym) out << pipeline_detail::fmt(*asym);
        out << '\n';
      }
    }

    if (!sys.ok_rating_values.empty())
      rating_histogram(sys.ok_rating_values, opts.histogram_bins,
                       opts.out_dir / ("histogram_" + sys.name + ".svg"),
                       opts.out_dir / ("histogram_" + sys.name + ".csv"), sys.name);

    heatmap_svg(fill_missing(sys.group.dsm, opts.fill_value),
                opts.out_dir / ("heatmap_" + sys.name + ".svg"), sys.name);
  }

  // participant scatter over the common label space
  if (opts.run_tsne) {
    std::vector<std::string> common = systems.front().group.dsm.labels;
    for (const auto& sys : systems) {
      std::set<std::string> here(sys.group.dsm.labels.begin(), sys.group.dsm.labels.end());
      std::vector<std::string> kept;
      for (const auto& l : common)
        if (here.count(l)) kept.push_back(l);
      common = std::move(kept);
    }
    if (common.size() < 3) throw Error("analyze --tsne: fewer than 3 common items across systems");

    std::vector<std::vector<double>> vectors;
    std::vector<std::string> point_labels;
    std::map<std::string, std::string> groups;
    for (const auto& sys : systems) {
      auto add_point = [&](const Dsm& d, const std::string& label) {
        const auto filled = fill_missing(detail::reindex(d, common), opts.fill_value);
        vectors.push_back(flatten(filled).values);
        point_labels.push_back(label);
        groups[label] = sys.name;
      };
      if (!sys.participant_dsms.empty()) {
        for (std::size_t i = 0; i < sys.participant_dsms.size(); ++i)
          add_point(sys.participant_dsms[i], sys.name + "/" + sys.participant_keys[i]);
      } else {
        add_point(sys.group.dsm, sys.name);
      }
    }

    TsneParams params = opts.tsne_params;
    const auto n_points = vectors.size();
    if (n_points >= 4) {
      if (params.perplexity >= static_cast<double>(n_points))
        params.perplexity = std::max(2.0, (static_cast<double>(n_points) - 1.0) / 3.0);
      auto layout = tsne(vectors, params, point_labels);
      write_layout_csv(layout, groups, opts.out_dir / "tsne_layout.csv");
      cohort_scatter(layout, groups, opts.out_dir / "tsne_scatter.svg", "Participant map");
    } else {
      unavailable_notes.push_back("tsne skipped: fewer than 4 points");
    }
  }

  // summary with input traceability
  {
    std::ofstream out(opts.out_dir / "summary.md");
    out << "# Analysis summary\n\n";
    out << "- tool: " << kToolName << ' ' << kToolVersion << "\n";
    out << "- comparisons (Bonferroni m): " << m << ", alpha " << pipeline_detail::fmt(opts.alpha) << "\n";
    out << "- systems:\n";
    for (const auto& sys : systems) {
      out << "  - " << sys.name << " <- " << sys.source;
      if (!sys.participant_dsms.empty()) out << " (" << sys.participant_dsms.size() << " participants)";
      if (!sys.manifest_hash.empty()) out << " [manifest " << sys.manifest_hash << "]";
      out << "\n";
    }
    if (!unavailable_notes.empty()) {
      out << "- unavailable comparisons:\n";
      for (const auto& note : unavailable_notes) out << "  - " << note << "\n";
    }
  }

  result.exit_code = 0;
  return result;
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

struct BaselineOptions {
  std::filesystem::path embedding_file;
  std::filesystem::path stimulus_file;
  std::string kind = "csv";  // "wordvec" | "csv"
  std::filesystem::path out_csv;
  bool strict = false;
};

/// Embedding file -> cosine DSM CSV over the stimulus labels (in table
/// order). Labels missing from the embedding source are reported; with
/// `strict` they are fatal, otherwise the DSM covers the found subset.
inline int cmd_baseline(const BaselineOptions& opts, std::vector<std::string>* missing_out = nullptr) {
  const auto set = load_stimulus_set(opts.stimulus_file);
  const auto labels = set.labels();

  EmbeddingTable table;
  if (opts.kind == "wordvec") {
    table = load_word_vectors(opts.embedding_file, {labels.begin(), labels.end()});
  } else if (opts.kind == "csv") {
    table = load_embedding_csv(opts.embedding_file);
  } else {
    throw ConfigError("baseline: unknown kind '" + opts.kind + "' (use wordvec or csv)");
  }

  std::vector<std::string> found, missing;
  for (const auto& l : labels) {
    if (table.vectors.count(l))
      found.push_back(l);
    else
      missing.push_back(l);
  }
  if (missing_out) *missing_out = missing;
  if (found.size() < 2) throw Error("baseline: fewer than 2 labels present in embedding source");
  if (opts.strict && !missing.empty()) {
    std::string list;
    for (const auto& l : missing) list += (list.empty() ? "" : ", ") + l;
    throw Error("baseline: labels missing from embeddings: " + list);
  }

  const Dsm d = cosine_dsm(table, found);
  write_dsm_csv(d, opts.out_csv);
  return 0;
}

// ---------------------------------------------------------------------------
// ingest-human
// ---------------------------------------------------------------------------

struct IngestHumanOptions {
  std::filesystem::path ratings_csv;  // participant,item_a,item_b,raw_0_50
  std::filesystem::path stimulus_file;
  std::filesystem::path out_dir;
};

struct IngestHumanResult {
  int participants = 0;
  std::vector<std::string> participant_keys;
};

/// Human ratings ingest: one row per (participant, unordered pair) with a raw
/// slider value on the 0-50 scale. Values are rescaled to 0-100, mirrored
/// into symmetric per-participant DSMs, and averaged into a group DSM.
inline IngestHumanResult cmd_ingest_human(const IngestHumanOptions& opts) {
  const auto set = load_stimulus_set(opts.stimulus_file);
  std::ifstream in(opts.ratings_csv);
  if (!in) throw ConfigError("cannot open ratings file: " + opts.ratings_csv.string());

  std::string line;
  if (!std::getline(in, line)) throw Error("empty ratings file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "participant,item_a,item_b,raw_0_50")
    throw Error("ratings file must have header participant,item_a,item_b,raw_0_50");

  std::vector<std::string> order;  // participants in first-appearance order
  std::map<std::string, RatingMatrix> matrices;
  std::vector<std::string> bad_rows;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string participant, item_a, item_b, raw;
    if (!std::getline(ls, participant, ',') || !std::getline(ls, item_a, ',') ||
        !std::getline(ls, item_b, ',') || !std::getline(ls, raw, ','))
      throw Error("malformed ratings row " + std::to_string(row_no));

    double value = 0.0;
    bool in_range = true;
    try {
      value = std::stod(raw);
    } catch (const std::exception&) {
      in_range = false;
    }
    if (!in_range || value < 0.0 || value > 50.0) {
      bad_rows.push_back(std::to_string(row_no));
      continue;
    }

    const auto i = set.index_of(item_a);
    const auto j = set.index_of(item_b);
    if (!i || !j)
      throw Error("row " + std::to_string(row_no) + ": item not in stimulus set: " + item_a + "/" + item_b);

    auto [it, inserted] = matrices.try_emplace(participant, set.labels());
    if (inserted) order.push_back(participant);
    auto& cell = it->second.at(*i, *j);
    if (cell.has_value())
      throw Error("row " + std::to_string(row_no) + ": duplicate rating for (" + item_a + ", " + item_b +
                  ") by " + participant);
    cell = 2.0 * value;  // 0-50 slider to the 0-100 scale
  }
  if (!bad_rows.empty()) {
    std::string list;
    for (const auto& r : bad_rows) list += (list.empty() ? "" : ", ") + r;
    throw Error("ratings outside the 0-50 scale at rows: " + list);
  }
  if (order.empty()) throw Error("no ratings found in " + opts.ratings_csv.string());

  std::filesystem::create_directories(opts.out_dir);
  std::vector<Dsm> dsms;
  IngestHumanResult result;
  for (const auto& key : order) {
    Dsm d = mirror_human(matrices.at(key));
    write_dsm_csv(d, opts.out_dir / (key + ".csv"));
    dsms.push_back(std::move(d));
    result.participant_keys.push_back(key);
  }
  const auto group = group_average(dsms);
  write_dsm_csv(group.dsm, opts.out_dir / "group.csv");
  result.participants = static_cast<int>(order.size());
  return result;
}

// ---------------------------------------------------------------------------
// viz / report
// ---------------------------------------------------------------------------

struct VizOptions {
  std::string name = "system";
  std::filesystem::path input;  // DSM CSV, DSM dir, or run dir
  std::filesystem::path out_dir;
  double fill_value = 0.5;
  int histogram_bins = 20;
};

inline int cmd_viz(const VizOptions& opts) {
  std::filesystem::create_directories(opts.out_dir);
  const auto sys = load_system(opts.name, opts.input);
  heatmap_svg(fill_missing(sys.group.dsm, opts.fill_value), opts.out_dir / ("heatmap_" + sys.name + ".svg"),
              sys.name);
  if (!sys.ok_rating_values.empty())
    rating_histogram(sys.ok_rating_values, opts.histogram_bins,
                     opts.out_dir / ("histogram_" + sys.name + ".svg"),
                     opts.out_dir / ("histogram_" + sys.name + ".csv"), sys.name);
  return 0;
}

struct ReportOptions {
  std::filesystem::path run_dir;  // directory containing manifest.json
  std::filesystem::path prices_file;
  std::filesystem::path out_dir;
};

/// Usage and cost accounting from run transcripts, repriced with the given
/// prices file (model id -> per-1k prompt/completion prices).
inline int cmd_report(const ReportOptions& opts) {
  std::ifstream in(opts.run_dir / "manifest.json");
  if (!in) throw ConfigError("no manifest.json in " + opts.run_dir.string());
  nlohmann::json mj;
  in >> mj;
  const PriceTable prices = PriceTable::load(opts.prices_file);
  const std::string model = mj.at("config").contains("backend")
                                ? mj.at("config")["backend"].value("model", std::string("unknown"))
                                : "unknown";

  std::filesystem::create_directories(opts.out_dir);
  std::ofstream out(opts.out_dir / "cost_report.csv");
  out << "run,participant,requests,prompt_tokens,completion_tokens,wall_ms,cost\n";

  ParticipantUsage grand;
  for (const auto& run : mj.at("runs")) {
    const std::string dir = run.at("dir").get<std::string>();
    for (const auto& p : run.at("participants")) {
      const auto transcript = opts.run_dir / dir / p.at("transcript").get<std::string>();
      const auto records = read_transcript(transcript);
      for (const auto& [key, usage] : usage_from_records(records, &prices, model)) {
        out << dir << ',' << key << ',' << usage.requests << ',' << usage.tokens.prompt_tokens << ','
            << usage.tokens.completion_tokens << ',' << pipeline_detail::fmt(usage.wall_ms) << ','
            << pipeline_detail::fmt(usage.cost) << '\n';
        grand.tokens += usage.tokens;
        grand.wall_ms += usage.wall_ms;
        grand.requests += usage.requests;
        grand.cost += usage.cost;
      }
    }
  }
  out << "total,," << grand.requests << ',' << grand.tokens.prompt_tokens << ','
      << grand.tokens.completion_tokens << ',' << pipeline_detail::fmt(grand.wall_ms) << ','
      << pipeline_detail::fmt(grand.cost) << '\n';
  return 0;
}

}  // namespace simrsa
