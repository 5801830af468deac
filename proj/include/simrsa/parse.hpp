#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace simrsa {

enum class Compliance { strict, recovered, noncompliant };
enum class ReplyKind { rating, description, ranking };

inline const char* to_string(Compliance c) {
  switch (c) {
    case Compliance::strict: return "strict";
    case Compliance::recovered: return "recovered";
    case Compliance::noncompliant: return "noncompliant";
  }
  return "?";
}

struct ParsedReply {
  ReplyKind kind;
  Compliance compliance = Compliance::noncompliant;
  std::optional<double> rating;            // rating replies, in [0,100]
  std::optional<std::string> description;  // description replies
  std::optional<std::vector<int>> ranking; // ranking replies
  std::string reason;                      // why a reply was not strict

  bool ok() const { return compliance != Compliance::noncompliant; }
};

struct ParseOptions {
  /// Case-insensitive substrings that mark a refusal.
  std::vector<std::string> refusal_markers = {"as an AI", "I cannot", "content filter"};
  /// Scale boilerplate deleted before number recovery.
  std::vector<std::string> boilerplate = {"out of 100", "on a scale", "/100", "0 to 100"};
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

inline bool contains_ci(std::string_view haystack, std::string_view needle) {
  if (needle.empty() || needle.size() > haystack.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    std::size_t j = 0;
    while (j < needle.size() && lower(haystack[i + j]) == lower(needle[j])) ++j;
    if (j == needle.size()) return true;
  }
  return false;
}

inline std::string erase_ci(std::string text, std::string_view needle) {
  if (needle.empty()) return text;
  std::string result;
  result.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    bool match = i + needle.size() <= text.size();
    for (std::size_t j = 0; match && j < needle.size(); ++j)
      if (lower(text[i + j]) != lower(needle[j])) match = false;
    if (match) {
      i += needle.size();
    } else {
      result.push_back(text[i]);
      ++i;
    }
  }
  return result;
}

/// True when the whole text is one plain number ("85", "62.5").
inline bool is_bare_number(std::string_view s, double& value) {
  if (s.empty()) return false;
  std::size_t i = 0, digits = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++digits;
  if (digits == 0) return false;
  if (i < s.size() && s[i] == '.') {
    ++i;
    std::size_t frac = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i, ++frac;
    if (frac == 0) return false;
  }
  if (i != s.size()) return false;
  value = std::stod(std::string(s));
  return true;
}

/// Collects standalone numbers: digit runs (optionally with a decimal part)
/// that do not abut a letter, another digit, a dot, or a minus sign.
inline std::vector<double> scan_numbers(std::string_view s) {
  std::vector<double> found;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!std::isdigit(static_cast<unsigned char>(s[i]))) {
      ++i;
      continue;
    }
    if (i > 0) {
      const char prev = s[i - 1];
      if (std::isalnum(static_cast<unsigned char>(prev)) || prev == '.' || prev == '-') {
        // part of a word, a larger number, or a negative value: skip the run
        while (i < s.size() &&
               (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.'))
          ++i;
        continue;
      }
    }
    std::size_t end = i;
    while (end < s.size() && std::isdigit(static_cast<unsigned char>(s[end]))) ++end;
    if (end < s.size() && s[end] == '.' && end + 1 < s.size() &&
        std::isdigit(static_cast<unsigned char>(s[end + 1]))) {
      ++end;
      while (end < s.size() && std::isdigit(static_cast<unsigned char>(s[end]))) ++end;
    }
    if (end < s.size() && std::isalpha(static_cast<unsigned char>(s[end]))) {
      // "100th", "4o": not a standalone number
      i = end;
      continue;
    }
    found.push_back(std::stod(std::string(s.substr(i, end - i))));
    i = end;
  }
  return found;
}

inline std::optional<std::string> refusal_hit(std::string_view text, const ParseOptions& opts) {
  for (const auto& marker : opts.refusal_markers)
    if (contains_ci(text, marker)) return marker;
  return std::nullopt;
}

}  // namespace detail

/// Extraction grammar for rating replies:
///   1. trim;
///   2. strict if the remainder is a single number in [0,100];
///   3. refusal markers anywhere -> noncompliant;
///   4. delete scale boilerplate, collect remaining in-range numbers;
///      exactly one -> recovered, otherwise noncompliant.
/// Out-of-range numbers are never clamped.
inline ParsedReply extract_rating(std::string_view text, const ParseOptions& opts = {}) {
  ParsedReply reply;
  reply.kind = ReplyKind::rating;
  const std::string_view trimmed = detail::trim(text);

  double value = 0.0;
  if (detail::is_bare_number(trimmed, value)) {
    if (value >= 0.0 && value <= 100.0) {
      reply.compliance = Compliance::strict;
      reply.rating = value;
      return reply;
    }
    reply.reason = "number out of range [0,100]";
    return reply;
  }

  if (auto marker = detail::refusal_hit(trimmed, opts)) {
    reply.reason = "refusal marker: " + *marker;
    return reply;
  }

  std::string stripped(trimmed);
  for (const auto& b : opts.boilerplate) stripped = detail::erase_ci(stripped, b);

  std::vector<double> in_range;
  for (double v : detail::scan_numbers(stripped))
    if (v >= 0.0 && v <= 100.0) in_range.push_back(v);

  if (in_range.size() == 1) {
    reply.compliance = Compliance::recovered;
    reply.rating = in_range.front();
    reply.reason = "single number recovered from verbose reply";
    return reply;
  }
  reply.reason = in_range.empty() ? "no number in range" : "multiple candidate numbers";
  return reply;
}

inline ParsedReply extract_description(std::string_view text, const ParseOptions& opts = {}) {
  ParsedReply reply;
  reply.kind = ReplyKind::description;
  const std::string_view trimmed = detail::trim(text);
  if (trimmed.empty()) {
    reply.reason = "empty description";
    return reply;
  }
  if (auto marker = detail::refusal_hit(trimmed, opts)) {
    reply.reason = "refusal marker: " + *marker;
    return reply;
  }
  reply.compliance = Compliance::strict;
  reply.description = std::string(trimmed);
  return reply;
}

/// Ranking replies: integers separated by commas/whitespace (brackets
/// tolerated). Strict iff a permutation of `expected_ids`; a duplicate-free
/// proper subset is recovered with the missing ids reported; duplicates or
/// foreign ids are noncompliant.
inline ParsedReply extract_ranking(std::string_view text, const std::set<int>& expected_ids,
                                   const ParseOptions& opts = {}) {
  ParsedReply reply;
  reply.kind = ReplyKind::ranking;
  const std::string_view trimmed = detail::trim(text);
  if (trimmed.empty()) {
    reply.reason = "empty reply";
    return reply;
  }
  if (auto marker = detail::refusal_hit(trimmed, opts)) {
    reply.reason = "refusal marker: " + *marker;
    return reply;
  }

  std::vector<int> ids;
  std::size_t i = 0;
  while (i < trimmed.size()) {
    if (std::isdigit(static_cast<unsigned char>(trimmed[i]))) {
      std::size_t end = i;
      while (end < trimmed.size() && std::isdigit(static_cast<unsigned char>(trimmed[end]))) ++end;
      ids.push_back(std::stoi(std::string(trimmed.substr(i, end - i))));
      i = end;
    } else {
      ++i;
    }
  }
  if (ids.empty()) {
    reply.reason = "no ids found";
    return reply;
  }

  std::set<int> seen;
  for (int id : ids) {
    if (!seen.insert(id).second) {
      reply.reason = "duplicate id " + std::to_string(id);
      return reply;
    }
    if (!expected_ids.count(id)) {
      reply.reason = "unexpected id " + std::to_string(id);
      return reply;
    }
  }

  if (seen.size() == expected_ids.size()) {
    reply.compliance = Compliance::strict;
    reply.ranking = std::move(ids);
    return reply;
  }

  std::string missing;
  for (int id : expected_ids)
    if (!seen.count(id)) missing += (missing.empty() ? "" : ", ") + std::to_string(id);
  reply.compliance = Compliance::recovered;
  reply.ranking = std::move(ids);
  reply.reason = "missing ids: " + missing;
  return reply;
}

}  // namespace simrsa
