#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "simrsa/error.hpp"

namespace simrsa {

enum class Category { Human, Animal, NaturalObject, ManmadeObject };

inline const char* to_string(Category c) {
  switch (c) {
    case Category::Human: return "Human";
    case Category::Animal: return "Animal";
    case Category::NaturalObject: return "NaturalObject";
    case Category::ManmadeObject: return "ManmadeObject";
  }
  return "?";
}

/// Maps raw class strings found in stimulus tables to canonical categories.
/// The defaults cover both the table spellings ("Neutral Objects",
/// "Manmade Objects") and the prose names ("Natural", "Man-Made").
using CategoryAliases = std::map<std::string, Category>;

inline CategoryAliases default_category_aliases() {
  return {
      {"Human", Category::Human},
      {"Animal", Category::Animal},
      {"Neutral Objects", Category::NaturalObject},
      {"Natural", Category::NaturalObject},
      {"NaturalObject", Category::NaturalObject},
      {"Manmade Objects", Category::ManmadeObject},
      {"Man-Made", Category::ManmadeObject},
      {"ManmadeObject", Category::ManmadeObject},
  };
}

struct Stimulus {
  std::string id;      // stable key, unique within a set
  std::string label;   // display word shown in prompts
  Category category = Category::NaturalObject;
  std::map<std::string, std::string> image_refs;  // dataset name -> relative path

  bool operator==(const Stimulus&) const = default;
};

struct StimulusSet {
  std::string name;
  std::vector<Stimulus> items;  // order is the canonical DSM row/column order

  std::size_t size() const { return items.size(); }

  std::optional<std::size_t> index_of(std::string_view id) const {
    for (std::size_t i = 0; i < items.size(); ++i)
      if (items[i].id == id) return i;
    return std::nullopt;
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    out.reserve(items.size());
    for (const auto& s : items) out.push_back(s.id);
    return out;
  }

  bool operator==(const StimulusSet&) const = default;
};

namespace detail {

inline std::vector<std::string> split_tsv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) fields.push_back(field);
  if (!line.empty() && line.back() == '\t') fields.emplace_back();
  return fields;
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace detail

/// Loads a stimulus table: UTF-8 TSV with a header row, columns `object`,
/// `class`, and zero or more image-path columns. "-" marks an absent image.
/// When `image_root` is given, every referenced image must exist under it.
inline StimulusSet load_stimulus_set(const std::filesystem::path& path,
                                     const std::optional<std::filesystem::path>& image_root = {},
                                     const CategoryAliases& aliases = default_category_aliases()) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open stimulus file: " + path.string());

  std::string header_line;
  if (!std::getline(in, header_line)) throw Error("no stimuli in " + path.string());
  const auto header = detail::split_tsv_line(detail::strip_cr(header_line));

  std::optional<std::size_t> object_col, class_col;
  std::vector<std::pair<std::size_t, std::string>> image_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "object") object_col = i;
    else if (header[i] == "class") class_col = i;
    else if (!header[i].empty()) image_cols.emplace_back(i, header[i]);
  }
  if (!object_col || !class_col)
    throw Error("stimulus file " + path.string() + " must have 'object' and 'class' columns");

  StimulusSet set;
  set.name = path.stem().string();
  std::set<std::string> seen;
  std::vector<std::string> missing_images;

  std::string line;
  std::size_t row = 1;  // header was row 1
  while (std::getline(in, line)) {
    ++row;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto fields = detail::split_tsv_line(line);
    if (fields.size() <= std::max(*object_col, *class_col))
      throw Error("row " + std::to_string(row) + ": too few columns");

    Stimulus s;
    s.id = fields[*object_col];
    s.label = s.id;
    if (s.label.empty()) throw Error("row " + std::to_string(row) + ": empty object label");
    if (!seen.insert(s.id).second)
      throw Error("duplicate object label '" + s.id + "' at row " + std::to_string(row));

    const std::string& raw_class = fields[*class_col];
    const auto it = aliases.find(raw_class);
    if (it == aliases.end())
      throw Error("unknown category '" + raw_class + "' at row " + std::to_string(row));
    s.category = it->second;

    for (const auto& [col, dataset] : image_cols) {
      if (col >= fields.size()) continue;
      const std::string& ref = fields[col];
      if (ref.empty() || ref == "-") continue;
      s.image_refs[dataset] = ref;
      if (image_root) {
        const auto full = *image_root / ref;
        if (!std::filesystem::exists(full)) missing_images.push_back(full.string());
      }
    }
    set.items.push_back(std::move(s));
  }

  if (set.items.empty()) throw Error("no stimuli in " + path.string());
  if (!missing_images.empty()) {
    std::string msg = "missing image files:";
    for (const auto& m : missing_images) msg += "\n  " + m;
    throw Error(msg);
  }
  return set;
}

/// Writes a set back in the same TSV format (used for round-tripping).
inline void write_stimulus_tsv(const StimulusSet& set, const std::filesystem::path& path) {
  std::set<std::string> datasets;
  for (const auto& s : set.items)
    for (const auto& [d, _] : s.image_refs) datasets.insert(d);

  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "object\tclass";
  for (const auto& d : datasets) out << '\t' << d;
  out << '\n';
  for (const auto& s : set.items) {
    // Write the table spellings so a written file loads under default aliases.
    const char* cls = nullptr;
    switch (s.category) {
      case Category::Human: cls = "Human"; break;
      case Category::Animal: cls = "Animal"; break;
      case Category::NaturalObject: cls = "Neutral Objects"; break;
      case Category::ManmadeObject: cls = "Manmade Objects"; break;
    }
    out << s.id << '\t' << cls;
    for (const auto& d : datasets) {
      const auto it = s.image_refs.find(d);
      out << '\t' << (it == s.image_refs.end() ? "-" : it->second);
    }
    out << '\n';
  }
}

enum class PairMode { ordered_with_diagonal, unordered_no_diagonal };

/// Canonical pair order: row-major over the set's item order. Ordered mode
/// yields n^2 pairs including the diagonal; unordered yields the n(n-1)/2
/// pairs with i < j.
inline std::vector<std::pair<std::size_t, std::size_t>> enumerate_pairs(std::size_t n, PairMode mode) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (mode == PairMode::ordered_with_diagonal) {
    pairs.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) pairs.emplace_back(i, j);
  } else {
    pairs.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  return pairs;
}

inline std::vector<std::pair<std::size_t, std::size_t>> enumerate_pairs(const StimulusSet& set, PairMode mode) {
  return enumerate_pairs(set.size(), mode);
}

/// Items whose ids appear in both sets, in a's order.
inline StimulusSet intersect_sets(const StimulusSet& a, const StimulusSet& b) {
  StimulusSet out;
  out.name = a.name + "&" + b.name;
  std::set<std::string> in_b;
  for (const auto& s : b.items) in_b.insert(s.id);
  for (const auto& s : a.items)
    if (in_b.count(s.id)) out.items.push_back(s);
  if (out.items.empty()) throw Error("empty intersection of '" + a.name + "' and '" + b.name + "'");
  return out;
}

/// Subset of items that carry an image reference for the named dataset.
inline StimulusSet with_image(const StimulusSet& set, const std::string& dataset) {
  StimulusSet out;
  out.name = set.name + "[" + dataset + "]";
  for (const auto& s : set.items)
    if (s.image_refs.count(dataset)) out.items.push_back(s);
  return out;
}

/// Masks over the canonical unordered pair positions: within = both items in
/// the same category, between = different categories. The two masks partition
/// all n(n-1)/2 positions.
struct PairMasks {
  std::vector<bool> within;
  std::vector<bool> between;
};

inline PairMasks category_masks(const StimulusSet& set) {
  const auto pairs = enumerate_pairs(set, PairMode::unordered_no_diagonal);
  PairMasks masks;
  masks.within.resize(pairs.size());
  masks.between.resize(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const bool same = set.items[pairs[k].first].category == set.items[pairs[k].second].category;
    masks.within[k] = same;
    masks.between[k] = !same;
  }
  return masks;
}

}  // namespace simrsa
