#pragma once

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "simrsa/cohort.hpp"
#include "simrsa/corpus.hpp"
#include "simrsa/dsm.hpp"
#include "simrsa/error.hpp"
#include "simrsa/parse.hpp"
#include "simrsa/rng.hpp"
#include "simrsa/trial.hpp"

namespace simrsa {

struct BackendConfig {
  enum class Kind { http, synthetic };
  Kind kind = Kind::synthetic;
  std::string endpoint;  // full URL of a chat-completions endpoint
  std::string model = "synthetic-rater";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string api_key_header = "Authorization";  // "api-key" for Azure-style auth
  double temperature = 1.0;
  std::optional<int> max_tokens;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 5;
  int parallel_participants = 1;
  std::chrono::milliseconds backoff_base{1000};
  std::chrono::milliseconds backoff_cap{60000};
  bool full_history = false;  // stateless [intro, trial] per request by default

  void validate() const {
    if (temperature < 0.0) throw ConfigError("backend: temperature must be >= 0");
    if (parallel_participants < 1) throw ConfigError("backend: parallel_participants must be >= 1");
    if (max_retries < 0) throw ConfigError("backend: max_retries must be >= 0");
    if (kind == Kind::http && endpoint.empty()) throw ConfigError("backend: http endpoint required");
  }
};

struct ChatMessage {
  std::string role;
  nlohmann::json content;  // string, or an array of typed content parts
};

inline ChatMessage make_user_message(const MessageParts& parts) {
  ChatMessage msg;
  msg.role = "user";
  if (parts.attachments.empty()) {
    msg.content = parts.text;
    return msg;
  }
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", parts.text}});
  for (const auto& att : parts.attachments)
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", att.data_url}}}});
  msg.content = content;
  return msg;
}

struct ChatReply {
  std::string text;
  TokenUsage usage;
  TrialStatus status = TrialStatus::ok;  // ok | content_filtered | transport_error
  int retries = 0;
  double latency_ms = 0.0;
  std::string error;
};

/// What a backend needs to answer one exchange: the rendered messages plus
/// the structured payload (the synthetic rater answers from the latter).
struct TrialContext {
  const Identity* identity = nullptr;
  RecordKind kind = RecordKind::rating;
  std::vector<std::string> payload_ids;
  std::vector<ChatMessage> messages;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatReply complete(const TrialContext& ctx) = 0;
  virtual const std::string& model() const = 0;
};

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible chat completions)
// ---------------------------------------------------------------------------

class HttpBackend : public ChatBackend {
 public:
  explicit HttpBackend(BackendConfig config, std::uint64_t jitter_seed = 0)
      : config_(std::move(config)), jitter_(derive_seed(jitter_seed, "backoff")) {
    config_.validate();
    split_endpoint(config_.endpoint, origin_, path_);
    client_ = std::make_unique<httplib::Client>(origin_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    client_->set_connection_timeout(secs.count(), 0);
    client_->set_read_timeout(secs.count(), 0);
    client_->set_write_timeout(secs.count(), 0);
    if (!config_.api_key_env.empty()) {
      const char* key = std::getenv(config_.api_key_env.c_str());
      if (key) api_key_ = key;
    }
  }

  const std::string& model() const override { return config_.model; }

  /// Sends one chat request. Transport failures and retryable HTTP statuses
  /// (429, 5xx) back off exponentially with jitter up to max_retries; a
  /// content-filter rejection is classified and never retried; any other
  /// 4xx is a fatal configuration error.
  ChatReply send_chat(const std::vector<ChatMessage>& messages) {
    nlohmann::json body{{"model", config_.model}, {"temperature", config_.temperature}};
    if (config_.max_tokens) body["max_tokens"] = *config_.max_tokens;
    auto& msgs = body["messages"] = nlohmann::json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    const std::string payload = body.dump();

    ChatReply reply;
    const auto start = std::chrono::steady_clock::now();
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        sleep_backoff(attempt);
        ++reply.retries;
      }
      httplib::Headers headers;
      if (!api_key_.empty()) {
        if (config_.api_key_header == "Authorization")
          headers.emplace("Authorization", "Bearer " + api_key_);
        else
          headers.emplace(config_.api_key_header, api_key_);
      }
      auto res = client_->Post(path_, headers, payload, "application/json");
      if (!res) {
        last_error = "transport: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "http " + std::to_string(res->status);
        continue;
      }
      if (res->status >= 400) {
        if (is_content_filter_error(res->body)) {
          reply.status = TrialStatus::content_filtered;
          reply.error = "content filter";
          finish(reply, start);
          return reply;
        }
        throw ConfigError("chat endpoint returned HTTP " + std::to_string(res->status) + ": " +
                          res->body.substr(0, 200));
      }
      parse_success(res->body, reply);
      finish(reply, start);
      return reply;
    }
    reply.status = TrialStatus::transport_error;
    reply.error = last_error.empty() ? "transport: retries exhausted" : last_error;
    finish(reply, start);
    return reply;
  }

  ChatReply complete(const TrialContext& ctx) override { return send_chat(ctx.messages); }

 private:
  static void split_endpoint(const std::string& url, std::string& origin, std::string& path) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must be a full URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      origin = url;
      path = "/";
    } else {
      origin = url.substr(0, path_start);
      path = url.substr(path_start);
    }
  }

  static bool is_content_filter_error(const std::string& body) {
    try {
      const auto j = nlohmann::json::parse(body);
      if (j.contains("error")) {
        const auto& err = j["error"];
        if (err.contains("code") && err["code"].is_string() &&
            err["code"].get<std::string>() == "content_filter")
          return true;
        if (err.contains("message") && err["message"].is_string() &&
            err["message"].get<std::string>().find("content filter") != std::string::npos)
          return true;
      }
    } catch (const std::exception&) {
    }
    return false;
  }

  void parse_success(const std::string& body, ChatReply& reply) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("malformed chat response: ") + e.what());
    }
    const auto& choices = j.at("choices");
    if (choices.empty()) throw ConfigError("chat response has no choices");
    const auto& choice = choices.at(0);
    if (choice.contains("finish_reason") && choice["finish_reason"].is_string() &&
        choice["finish_reason"].get<std::string>() == "content_filter") {
      reply.status = TrialStatus::content_filtered;
      reply.error = "content filter";
      return;
    }
    const auto& content = choice.at("message").at("content");
    reply.text = content.is_string() ? content.get<std::string>() : content.dump();
    if (j.contains("usage")) {
      reply.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0l);
      reply.usage.completion_tokens = j["usage"].value("completion_tokens", 0l);
    }
    reply.status = TrialStatus::ok;
  }

  void sleep_backoff(int attempt) {
    const double base = static_cast<double>(config_.backoff_base.count());
    const double cap = static_cast<double>(config_.backoff_cap.count());
    const double exp_delay = std::min(cap, base * std::pow(2.0, attempt - 1));
    const double jittered = exp_delay * (0.5 + 0.5 * jitter_.uniform());
    std::this_thread::sleep_for(std::chrono::milliseconds(static_cast<long>(jittered)));
  }

  static void finish(ChatReply& reply, std::chrono::steady_clock::time_point start) {
    reply.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }

  BackendConfig config_;
  std::string origin_, path_, api_key_;
  std::unique_ptr<httplib::Client> client_;
  Rng jitter_;
};

// ---------------------------------------------------------------------------
// Synthetic rater backend (deterministic test oracle for the pipeline)
// ---------------------------------------------------------------------------

struct SyntheticRaterConfig {
  Dsm latent;  // symmetric, zero diagonal, values in [0,1]
  double persona_offset_scale = 0.0;
  double noise_scale = 0.0;
  double noncompliance_rate = 0.0;
  double bimodal_push = 0.0;  // in [0,1]; pushes ratings toward the 0/100 ends

  void validate() const {
    if (noncompliance_rate < 0.0 || noncompliance_rate > 1.0)
      throw ConfigError("synthetic: noncompliance_rate must be in [0,1]");
    if (bimodal_push < 0.0 || bimodal_push > 1.0)
      throw ConfigError("synthetic: bimodal_push must be in [0,1]");
    if (persona_offset_scale < 0.0 || noise_scale < 0.0)
      throw ConfigError("synthetic: scales must be >= 0");
    const std::size_t n = latent.n();
    for (std::size_t i = 0; i < n; ++i) {
      if (latent.at(i, i) && *latent.at(i, i) != 0.0)
        throw ConfigError("synthetic: latent DSM diagonal must be zero");
      for (std::size_t j = i + 1; j < n; ++j) {
        const auto &a = latent.at(i, j), &b = latent.at(j, i);
        if (a.has_value() != b.has_value() || (a && *a != *b))
          throw ConfigError("synthetic: latent DSM must be symmetric");
        if (a && (*a < 0.0 || *a > 1.0))
          throw ConfigError("synthetic: latent DSM values must be in [0,1]");
      }
    }
  }
};

/// Uniform random latent DSM for synthetic experiments.
inline Dsm random_latent_dsm(const std::vector<std::string>& labels, std::uint64_t seed) {
  Dsm d(labels);
  Rng rng(derive_seed(seed, "latent_dsm"));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    d.at(i, i) = 0.0;
    for (std::size_t j = i + 1; j < labels.size(); ++j) d.set_symmetric(i, j, rng.uniform());
  }
  return d;
}

/// Persona offset: one draw per identity, stable across trials and resumes.
inline double persona_offset(const SyntheticRaterConfig& cfg, const Identity& identity) {
  Rng rng(derive_seed(identity.seed, "persona_offset"));
  return rng.normal(0.0, cfg.persona_offset_scale);
}

/// The synthetic rater's reply for a rating trial. Draw order from `rng`:
/// first the noncompliance coin, then the trial noise. The rating is
///   s = 100 (1 - latent_d) + persona_offset + noise
/// then pushed toward the scale ends by s -> 50 + (s - 50)(1 + 3 push),
/// clamped to [0,100] and rounded to an integer string.
inline std::string synthetic_reply(const SyntheticRaterConfig& cfg, const Identity& identity,
                                   const std::pair<std::string, std::string>& payload, Rng& rng) {
  const auto i = [&] {
    for (std::size_t k = 0; k < cfg.latent.labels.size(); ++k)
      if (cfg.latent.labels[k] == payload.first) return k;
    throw Error("synthetic: unknown stimulus id '" + payload.first + "'");
  }();
  const auto j = [&] {
    for (std::size_t k = 0; k < cfg.latent.labels.size(); ++k)
      if (cfg.latent.labels[k] == payload.second) return k;
    throw Error("synthetic: unknown stimulus id '" + payload.second + "'");
  }();

  if (rng.uniform() < cfg.noncompliance_rate)
    return "As an AI language model, I cannot provide a single number for this pair.";

  const auto& cell = cfg.latent.at(i, j);
  const double distance = cell ? *cell : 0.0;
  double s = 100.0 * (1.0 - distance) + persona_offset(cfg, identity) + rng.normal(0.0, cfg.noise_scale);
  if (cfg.bimodal_push > 0.0) s = 50.0 + (s - 50.0) * (1.0 + 3.0 * cfg.bimodal_push);
  s = std::min(100.0, std::max(0.0, s));
  return std::to_string(static_cast<long>(std::lround(s)));
}

class SyntheticBackend : public ChatBackend {
 public:
  explicit SyntheticBackend(SyntheticRaterConfig config, std::string model_name = "synthetic-rater")
      : config_(std::move(config)), model_(std::move(model_name)) {
    config_.validate();
  }

  const std::string& model() const override { return model_; }

  ChatReply complete(const TrialContext& ctx) override {
    ChatReply reply;
    switch (ctx.kind) {
      case RecordKind::intro:
        reply.text = "Okay, I understand the task.";
        break;
      case RecordKind::description:
        reply.text = "A photograph of a " + (ctx.payload_ids.empty() ? "thing" : ctx.payload_ids[0]) + ".";
        break;
      case RecordKind::ranking: {
        // echo the presented ids (payload_ids[0] is the target word)
        for (std::size_t k = 1; k < ctx.payload_ids.size(); ++k) {
          if (k > 1) reply.text += ", ";
          reply.text += ctx.payload_ids[k];
        }
        break;
      }
      case RecordKind::rating: {
        if (ctx.payload_ids.size() != 2 || !ctx.identity)
          throw Error("synthetic backend: rating trial needs two payload ids and an identity");
        Rng rng(trial_seed(*ctx.identity, ctx.payload_ids[0], ctx.payload_ids[1]));
        reply.text = synthetic_reply(config_, *ctx.identity, {ctx.payload_ids[0], ctx.payload_ids[1]}, rng);
        break;
      }
    }
    // deterministic stand-in token accounting (~4 chars per token)
    long prompt_chars = 0;
    for (const auto& m : ctx.messages)
      prompt_chars += static_cast<long>(m.content.is_string() ? m.content.get<std::string>().size()
                                                              : m.content.dump().size());
    reply.usage.prompt_tokens = prompt_chars / 4 + 1;
    reply.usage.completion_tokens = static_cast<long>(reply.text.size()) / 4 + 1;
    reply.status = TrialStatus::ok;
    reply.latency_ms = 0.0;
    return reply;
  }

  /// Per-trial generator seed is a pure function of identity and payload, so
  /// resumed or reordered runs reproduce the same replies.
  static std::uint64_t trial_seed(const Identity& identity, const std::string& a, const std::string& b) {
    return derive_seed(derive_seed(identity.seed, "trial:" + a), "x:" + b);
  }

  const SyntheticRaterConfig& config() const { return config_; }

 private:
  SyntheticRaterConfig config_;
  std::string model_;
};

// ---------------------------------------------------------------------------
// Usage and cost accounting
// ---------------------------------------------------------------------------

struct PriceEntry {
  double prompt_per_1k = 0.0;
  double completion_per_1k = 0.0;
};

struct PriceTable {
  std::map<std::string, PriceEntry> prices;

  static PriceTable load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open prices file: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError("malformed prices file " + path.string() + ": " + e.what());
    }
    PriceTable table;
    for (const auto& [model, entry] : j.items()) {
      PriceEntry p;
      p.prompt_per_1k = entry.value("prompt_per_1k", 0.0);
      p.completion_per_1k = entry.value("completion_per_1k", 0.0);
      table.prices[model] = p;
    }
    return table;
  }

  double cost(const std::string& model, const TokenUsage& usage) const {
    const auto it = prices.find(model);
    if (it == prices.end()) return 0.0;
    return static_cast<double>(usage.prompt_tokens) / 1000.0 * it->second.prompt_per_1k +
           static_cast<double>(usage.completion_tokens) / 1000.0 * it->second.completion_per_1k;
  }
};

struct ParticipantUsage {
  TokenUsage tokens;
  double wall_ms = 0.0;
  long requests = 0;
  double cost = 0.0;
};

/// Serialized aggregation point for per-participant usage; safe to share
/// across concurrent participant sessions.
class UsageLedger {
 public:
  void add(const std::string& participant, const TokenUsage& usage, double latency_ms, double cost) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto& u = by_participant_[participant];
    u.tokens += usage;
    u.wall_ms += latency_ms;
    u.requests += 1;
    u.cost += cost;
  }

  std::map<std::string, ParticipantUsage> by_participant() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return by_participant_;
  }

  ParticipantUsage totals() const {
    std::lock_guard<std::mutex> lock(mutex_);
    ParticipantUsage t;
    for (const auto& [_, u] : by_participant_) {
      t.tokens += u.tokens;
      t.wall_ms += u.wall_ms;
      t.requests += u.requests;
      t.cost += u.cost;
    }
    return t;
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, ParticipantUsage> by_participant_;
};

/// Rebuilds per-participant usage from transcript records (totals must match
/// a live ledger exactly).
inline std::map<std::string, ParticipantUsage> usage_from_records(const std::vector<TrialRecord>& records,
                                                                  const PriceTable* prices,
                                                                  const std::string& model) {
  std::map<std::string, ParticipantUsage> usage;
  for (const auto& r : records) {
    if (r.status == TrialStatus::skipped) continue;
    auto& u = usage[r.participant_key];
    u.tokens += r.usage;
    u.wall_ms += r.latency_ms;
    u.requests += 1;
    u.cost += prices ? prices->cost(model, r.usage) : 0.0;
  }
  return usage;
}

// ---------------------------------------------------------------------------
// Participant runner
// ---------------------------------------------------------------------------

/// One planned exchange. For image_description rating trials the description
/// texts are substituted at send time from the participant's own earlier
/// description records.
struct PlannedTrial {
  long index = 0;
  RecordKind kind = RecordKind::rating;
  std::vector<std::string> payload_ids;
  TrialPayload payload;
};

struct ParticipantRunConfig {
  TaskKind task = TaskKind::word_word;
  PromptTemplate tmpl;  // task defaults used when intro_text is empty
  std::filesystem::path transcript_path;
  bool full_history = false;
  const PriceTable* prices = nullptr;
  std::string model = "synthetic-rater";
  UsageLedger* ledger = nullptr;
};

struct ParticipantResult {
  std::vector<TrialRecord> records;
  bool completed = false;
  long new_requests = 0;
  std::string error;
};

using ImageProvider = std::function<ImageRef(const Stimulus&)>;

/// Builds the standard trial plan for a stimulus-set task: pair trials in the
/// participant's shuffled order, preceded by one description trial per item
/// (canonical order) for the image_description task.
inline std::vector<PlannedTrial> plan_trials(TaskKind task, const StimulusSet& set, PairMode mode,
                                             const Identity& identity,
                                             const std::string& image_dataset = "",
                                             const ImageProvider& images = {}) {
  std::vector<PlannedTrial> plan;

  std::map<std::string, ImageRef> encoded;
  auto image_for = [&](const Stimulus& s) -> ImageRef {
    auto it = encoded.find(s.id);
    if (it != encoded.end()) return it->second;
    if (!images) throw Error("plan_trials: image task without an image provider");
    if (!s.image_refs.count(image_dataset))
      throw Error("plan_trials: stimulus '" + s.id + "' has no image for dataset '" + image_dataset + "'");
    ImageRef ref = images(s);
    encoded[s.id] = ref;
    return ref;
  };

  if (task == TaskKind::image_description) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      PlannedTrial t;
      t.index = static_cast<long>(i);
      t.kind = RecordKind::description;
      t.payload_ids = {set.items[i].id};
      t.payload = SingleImagePayload{image_for(set.items[i])};
      plan.push_back(std::move(t));
    }
  }

  auto pairs = shuffle_trials(enumerate_pairs(set, mode), identity);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& [i, j] = pairs[k];
    PlannedTrial t;
    t.index = static_cast<long>(k);
    t.kind = RecordKind::rating;
    t.payload_ids = {set.items[i].id, set.items[j].id};
    switch (task) {
      case TaskKind::word_word:
        t.payload = WordPairPayload{set.items[i].label, set.items[j].label};
        break;
      case TaskKind::image_image:
        t.payload = ImagePairPayload{image_for(set.items[i]), image_for(set.items[j])};
        break;
      case TaskKind::image_description:
        t.payload = DescriptionPairPayload{"", ""};  // filled from description records
        break;
      default:
        throw Error("plan_trials: task requires explicit trial construction");
    }
    plan.push_back(std::move(t));
  }
  return plan;
}

/// Runs one participant: the intro exchange once, then every planned trial,
/// appending each record to the JSONL transcript as it completes. Trials
/// already present in the transcript are skipped, so interrupted runs resume
/// where they stopped. A transport failure (after retries) or a fatal backend
/// error aborts the participant, leaving the transcript valid for resume.
inline ParticipantResult run_participant(ChatBackend& backend, const ParticipantRunConfig& cfg,
                                         const Identity& identity, const std::vector<PlannedTrial>& plan) {
  const PromptTemplate tmpl = cfg.tmpl.intro_text.empty() ? default_template(cfg.task) : cfg.tmpl;

  ParticipantResult result;
  auto existing = read_transcript(cfg.transcript_path);
  std::map<std::pair<int, long>, TrialRecord> done;
  bool intro_done = false;
  std::map<std::string, std::string> descriptions;  // id -> parsed description
  for (const auto& r : existing) {
    if (r.participant_key != identity.participant_key)
      throw Error("transcript " + cfg.transcript_path.string() + " belongs to " + r.participant_key);
    if (r.kind == RecordKind::intro) intro_done = true;
    done[{static_cast<int>(r.kind), r.trial_index}] = r;
    if (r.kind == RecordKind::description && r.status == TrialStatus::ok && !r.payload_ids.empty())
      descriptions[r.payload_ids[0]] = r.parsed.get<std::string>();
  }

  TranscriptWriter writer(cfg.transcript_path);
  const std::string intro_text = render_intro(tmpl, identity);
  const ChatMessage intro_msg{"user", intro_text};

  std::vector<ChatMessage> history{intro_msg};  // full-history mode only

  auto account = [&](const TrialRecord& r) {
    if (cfg.ledger)
      cfg.ledger->add(r.participant_key, r.usage, r.latency_ms,
                      cfg.prices ? cfg.prices->cost(cfg.model, r.usage) : 0.0);
  };

  auto send = [&](TrialContext& ctx) {
    ++result.new_requests;
    return backend.complete(ctx);
  };

  if (!intro_done) {
    TrialContext ctx;
    ctx.identity = &identity;
    ctx.kind = RecordKind::intro;
    ctx.messages = {intro_msg};
    ChatReply reply;
    try {
      reply = send(ctx);
    } catch (const std::exception& e) {
      result.error = e.what();
      result.records = std::move(existing);
      return result;
    }
    TrialRecord rec;
    rec.participant_key = identity.participant_key;
    rec.trial_index = -1;
    rec.kind = RecordKind::intro;
    rec.request_digest = stable_digest_hex(intro_text);
    rec.reply_text = reply.text;
    rec.status = reply.status;
    if (reply.status == TrialStatus::ok) rec.parsed = reply.text;
    rec.latency_ms = reply.latency_ms;
    rec.usage = reply.usage;
    rec.retries = reply.retries;
    if (!reply.error.empty()) rec.note = reply.error;
    writer.append(rec);
    account(rec);
    existing.push_back(rec);
    if (reply.status == TrialStatus::transport_error) {
      result.error = "intro failed: " + reply.error;
      result.records = std::move(existing);
      return result;
    }
    if (cfg.full_history && reply.status == TrialStatus::ok)
      history.push_back({"assistant", reply.text});
  } else if (cfg.full_history) {
    for (const auto& r : existing)
      if (r.kind == RecordKind::intro && r.status == TrialStatus::ok)
        history.push_back({"assistant", r.reply_text});
  }

  for (const auto& trial : plan) {
    if (const auto it = done.find({static_cast<int>(trial.kind), trial.index}); it != done.end()) {
      // full-history resume: replay the completed exchange into the context
      if (cfg.full_history && it->second.status == TrialStatus::ok) {
        TrialPayload replay_payload = trial.payload;
        if (cfg.task == TaskKind::image_description && trial.kind == RecordKind::rating) {
          const auto a = descriptions.find(trial.payload_ids[0]);
          const auto b = descriptions.find(trial.payload_ids[1]);
          if (a == descriptions.end() || b == descriptions.end()) continue;
          replay_payload = DescriptionPairPayload{a->second, b->second};
        }
        history.push_back(make_user_message(render_trial(cfg.task, tmpl, identity, replay_payload)));
        history.push_back({"assistant", it->second.reply_text});
      }
      continue;
    }

    TrialPayload payload = trial.payload;
    TrialRecord rec;
    rec.participant_key = identity.participant_key;
    rec.trial_index = trial.index;
    rec.kind = trial.kind;
    rec.payload_ids = trial.payload_ids;

    if (cfg.task == TaskKind::image_description && trial.kind == RecordKind::rating) {
      const auto a = descriptions.find(trial.payload_ids[0]);
      const auto b = descriptions.find(trial.payload_ids[1]);
      if (a == descriptions.end() || b == descriptions.end()) {
        rec.status = TrialStatus::skipped;
        rec.note = "missing description for one or both items";
        writer.append(rec);
        existing.push_back(rec);
        continue;
      }
      payload = DescriptionPairPayload{a->second, b->second};
    }

    const MessageParts parts = render_trial(cfg.task, tmpl, identity, payload);
    const ChatMessage trial_msg = make_user_message(parts);

    TrialContext ctx;
    ctx.identity = &identity;
    ctx.kind = trial.kind;
    ctx.payload_ids = trial.payload_ids;
    if (cfg.full_history) {
      ctx.messages = history;
      ctx.messages.push_back(trial_msg);
    } else {
      ctx.messages = {intro_msg, trial_msg};
    }

    ChatReply reply;
    try {
      reply = send(ctx);
    } catch (const std::exception& e) {
      result.error = e.what();
      result.records = std::move(existing);
      return result;
    }

    rec.request_digest = stable_digest_hex(parts.text);
    rec.reply_text = reply.text;
    rec.latency_ms = reply.latency_ms;
    rec.usage = reply.usage;
    rec.retries = reply.retries;

    if (reply.status != TrialStatus::ok) {
      rec.status = reply.status;
      rec.note = reply.error;
    } else {
      switch (trial.kind) {
        case RecordKind::rating: {
          const auto parsed = extract_rating(reply.text);
          if (parsed.ok()) {
            rec.status = TrialStatus::ok;
            rec.parsed = *parsed.rating;
          } else {
            rec.status = TrialStatus::noncompliant;
          }
          rec.note = parsed.reason;
          break;
        }
        case RecordKind::description: {
          const auto parsed = extract_description(reply.text);
          if (parsed.ok()) {
            rec.status = TrialStatus::ok;
            rec.parsed = *parsed.description;
            descriptions[trial.payload_ids[0]] = *parsed.description;
          } else {
            rec.status = TrialStatus::noncompliant;
            rec.note = parsed.reason;
          }
          break;
        }
        case RecordKind::ranking: {
          std::set<int> expected;
          if (const auto* rp = std::get_if<RankingPayload>(&payload))
            for (const auto& [id, _] : rp->sentences) expected.insert(id);
          const auto parsed = extract_ranking(reply.text, expected);
          if (parsed.ok()) {
            rec.status = TrialStatus::ok;
            rec.parsed = *parsed.ranking;
          } else {
            rec.status = TrialStatus::noncompliant;
          }
          rec.note = parsed.reason;
          break;
        }
        case RecordKind::intro:
          break;
      }
    }

    writer.append(rec);
    account(rec);
    existing.push_back(rec);

    if (rec.status == TrialStatus::transport_error) {
      result.error = "trial " + std::to_string(trial.index) + " failed: " + reply.error;
      result.records = std::move(existing);
      return result;
    }

    if (cfg.full_history && rec.status == TrialStatus::ok) {
      history.push_back(trial_msg);
      history.push_back({"assistant", reply.text});
    }
  }

  result.completed = true;
  result.records = std::move(existing);
  return result;
}

}  // namespace simrsa
