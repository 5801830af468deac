#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "simrsa/dsm.hpp"
#include "simrsa/error.hpp"

namespace simrsa {

struct EmbeddingTable {
  std::map<std::string, std::vector<double>> vectors;
  std::size_t dimension = 0;
  std::vector<std::string> missing;  // wanted labels not found (word-vector loader)
};

namespace detail {

inline void check_finite(const std::vector<double>& v, const std::string& label) {
  for (double x : v)
    if (!std::isfinite(x)) throw Error("non-finite value in embedding for '" + label + "'");
}

}  // namespace detail

/// GloVe-style text format: each line is a token followed by whitespace
/// separated reals. Only `wanted` labels are kept; labels not found are
/// listed in `missing` (the caller decides whether that is fatal).
/// Multi-token labels are averaged over their tokens.
inline EmbeddingTable load_word_vectors(const std::filesystem::path& path,
                                        const std::set<std::string>& wanted) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open word-vector file: " + path.string());

  // Split multi-token labels so their pieces can be looked up per token.
  std::set<std::string> wanted_tokens;
  for (const auto& label : wanted) {
    std::istringstream ls(label);
    std::string tok;
    while (ls >> tok) wanted_tokens.insert(tok);
  }

  std::map<std::string, std::vector<double>> by_token;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    if (!wanted_tokens.count(token)) {
      if (dim == 0) {
        // still need the dimension from the first parsable line
        double v;
        std::size_t d = 0;
        while (ls >> v) ++d;
        if (d == 0) throw Error("malformed word-vector line " + std::to_string(line_no));
        dim = d;
      }
      continue;
    }
    std::vector<double> vec;
    double v;
    while (ls >> v) vec.push_back(v);
    if (vec.empty()) throw Error("malformed word-vector line " + std::to_string(line_no));
    if (dim == 0) dim = vec.size();
    if (vec.size() != dim)
      throw Error("dimension mismatch at line " + std::to_string(line_no) + ": expected " +
                  std::to_string(dim) + ", got " + std::to_string(vec.size()));
    detail::check_finite(vec, token);
    by_token[token] = std::move(vec);
  }
  if (dim == 0) throw Error("no vectors found in " + path.string());

  EmbeddingTable table;
  table.dimension = dim;
  for (const auto& label : wanted) {
    std::istringstream ls(label);
    std::string tok;
    std::vector<double> acc(dim, 0.0);
    std::size_t found = 0, tokens = 0;
    while (ls >> tok) {
      ++tokens;
      const auto it = by_token.find(tok);
      if (it == by_token.end()) continue;
      ++found;
      for (std::size_t d = 0; d < dim; ++d) acc[d] += it->second[d];
    }
    if (found == 0 || found != tokens) {
      table.missing.push_back(label);
      continue;
    }
    for (auto& x : acc) x /= static_cast<double>(found);
    table.vectors[label] = std::move(acc);
  }
  return table;
}

/// CSV with header `label,d0,d1,...`; one embedding per row, stored as-is.
inline EmbeddingTable load_embedding_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embedding file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("empty embedding file: " + path.string());

  EmbeddingTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string label;
    if (!std::getline(ls, label, ','))
      throw Error("malformed embedding line " + std::to_string(line_no));
    std::vector<double> vec;
    std::string field;
    while (std::getline(ls, field, ',')) {
      try {
        vec.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw Error("malformed number at line " + std::to_string(line_no) + " in " + path.string());
      }
    }
    if (vec.empty()) throw Error("empty embedding at line " + std::to_string(line_no));
    if (table.dimension == 0) table.dimension = vec.size();
    if (vec.size() != table.dimension)
      throw Error("dimension mismatch at line " + std::to_string(line_no) + ": expected " +
                  std::to_string(table.dimension) + ", got " + std::to_string(vec.size()));
    detail::check_finite(vec, label);
    if (!table.vectors.emplace(label, std::move(vec)).second)
      throw Error("duplicate label '" + label + "' at line " + std::to_string(line_no));
  }
  if (table.vectors.empty()) throw Error("no embeddings in " + path.string());
  return table;
}

/// Cosine-distance DSM over the given label order: d = 1 - cos(vi, vj).
/// If any pair has a negative cosine the whole matrix is divided by 2 to stay
/// within [0,1], and the rescale is flagged (a monotone transform, so rank
/// correlations are unaffected).
inline Dsm cosine_dsm(const EmbeddingTable& table, const std::vector<std::string>& labels) {
  std::vector<const std::vector<double>*> vecs;
  vecs.reserve(labels.size());
  std::string missing;
  for (const auto& label : labels) {
    const auto it = table.vectors.find(label);
    if (it == table.vectors.end()) {
      missing += (missing.empty() ? "" : ", ") + label;
      continue;
    }
    vecs.push_back(&it->second);
  }
  if (!missing.empty()) throw Error("cosine_dsm: labels missing from table: " + missing);

  std::vector<double> norms(labels.size());
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    double s = 0.0;
    for (double v : *vecs[i]) s += v * v;
    if (s == 0.0) throw Error("cosine_dsm: zero vector for label '" + labels[i] + "'");
    norms[i] = std::sqrt(s);
  }

  const std::size_t n = labels.size();
  Dsm d(labels);
  d.provenance = Provenance::derived_from_embeddings;
  bool any_negative = false;
  for (std::size_t i = 0; i < n; ++i) {
    d.at(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < vecs[i]->size(); ++k) dot += (*vecs[i])[k] * (*vecs[j])[k];
      const double cosine = dot / (norms[i] * norms[j]);
      if (cosine < 0.0) any_negative = true;
      d.set_symmetric(i, j, 1.0 - cosine);
    }
  }
  if (any_negative) {
    d.rescaled_negative_cosine = true;
    for (auto& cell : d.cells)
      if (cell) *cell /= 2.0;
  }
  // guard against fp residue just outside [0,1]
  for (auto& cell : d.cells)
    if (cell) *cell = std::clamp(*cell, 0.0, 1.0);
  return d;
}

}  // namespace simrsa
