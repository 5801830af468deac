#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "simrsa/error.hpp"

namespace simrsa {

enum class TrialStatus { ok, noncompliant, content_filtered, transport_error, skipped };
enum class RecordKind { intro, rating, description, ranking };

inline const char* to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::ok: return "ok";
    case TrialStatus::noncompliant: return "noncompliant";
    case TrialStatus::content_filtered: return "content_filtered";
    case TrialStatus::transport_error: return "transport_error";
    case TrialStatus::skipped: return "skipped";
  }
  return "?";
}

inline TrialStatus trial_status_from_string(const std::string& s) {
  if (s == "ok") return TrialStatus::ok;
  if (s == "noncompliant") return TrialStatus::noncompliant;
  if (s == "content_filtered") return TrialStatus::content_filtered;
  if (s == "transport_error") return TrialStatus::transport_error;
  if (s == "skipped") return TrialStatus::skipped;
  throw Error("unknown trial status: " + s);
}

inline const char* to_string(RecordKind k) {
  switch (k) {
    case RecordKind::intro: return "intro";
    case RecordKind::rating: return "rating";
    case RecordKind::description: return "description";
    case RecordKind::ranking: return "ranking";
  }
  return "?";
}

inline RecordKind record_kind_from_string(const std::string& s) {
  if (s == "intro") return RecordKind::intro;
  if (s == "rating") return RecordKind::rating;
  if (s == "description") return RecordKind::description;
  if (s == "ranking") return RecordKind::ranking;
  throw Error("unknown record kind: " + s);
}

struct TokenUsage {
  long prompt_tokens = 0;
  long completion_tokens = 0;

  TokenUsage& operator+=(const TokenUsage& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
};

/// One query/reply exchange. `parsed` is non-null exactly when status is ok:
/// a number for ratings, a string for descriptions and the intro
/// acknowledgment, an id array for rankings.
struct TrialRecord {
  std::string participant_key;
  long trial_index = 0;  // -1 for the intro exchange
  RecordKind kind = RecordKind::rating;
  std::vector<std::string> payload_ids;
  std::string request_digest;
  std::string reply_text;
  TrialStatus status = TrialStatus::skipped;
  nlohmann::json parsed;  // null unless status == ok
  double latency_ms = 0.0;
  TokenUsage usage;
  int retries = 0;
  std::string note;  // parse reason / error details

  void validate() const {
    const bool has_value = !parsed.is_null();
    if (has_value != (status == TrialStatus::ok))
      throw Error("trial record invariant violated: parsed value present iff status = ok");
  }
};

inline nlohmann::json to_json(const TrialRecord& r) {
  nlohmann::json j{{"participant", r.participant_key},
                   {"trial", r.trial_index},
                   {"kind", to_string(r.kind)},
                   {"payload", r.payload_ids},
                   {"request_digest", r.request_digest},
                   {"reply", r.reply_text},
                   {"status", to_string(r.status)},
                   {"parsed", r.parsed},
                   {"latency_ms", r.latency_ms},
                   {"prompt_tokens", r.usage.prompt_tokens},
                   {"completion_tokens", r.usage.completion_tokens},
                   {"retries", r.retries}};
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

inline TrialRecord trial_record_from_json(const nlohmann::json& j) {
  TrialRecord r;
  r.participant_key = j.at("participant").get<std::string>();
  r.trial_index = j.at("trial").get<long>();
  r.kind = record_kind_from_string(j.at("kind").get<std::string>());
  r.payload_ids = j.at("payload").get<std::vector<std::string>>();
  r.request_digest = j.at("request_digest").get<std::string>();
  r.reply_text = j.at("reply").get<std::string>();
  r.status = trial_status_from_string(j.at("status").get<std::string>());
  r.parsed = j.at("parsed");
  r.latency_ms = j.at("latency_ms").get<double>();
  r.usage.prompt_tokens = j.at("prompt_tokens").get<long>();
  r.usage.completion_tokens = j.at("completion_tokens").get<long>();
  r.retries = j.at("retries").get<int>();
  if (j.contains("note")) r.note = j.at("note").get<std::string>();
  r.validate();
  return r;
}

/// Append-only JSONL transcript, one TrialRecord per line, flushed per write
/// so an interrupted run leaves a valid resumable file.
class TranscriptWriter {
 public:
  explicit TranscriptWriter(const std::filesystem::path& path)
      : out_(path, std::ios::app | std::ios::binary) {
    if (!out_) throw Error("cannot open transcript for append: " + path.string());
  }

  void append(const TrialRecord& r) {
    r.validate();
    out_ << to_json(r).dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline std::vector<TrialRecord> read_transcript(const std::filesystem::path& path) {
  std::vector<TrialRecord> records;
  std::ifstream in(path, std::ios::binary);
  if (!in) return records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(trial_record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw Error("transcript " + path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace simrsa
