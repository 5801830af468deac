#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "simrsa/corpus.hpp"
#include "simrsa/error.hpp"
#include "simrsa/trial.hpp"

namespace simrsa {

/// Per-participant ordered similarity ratings in [0,100]. Cell (i,j) holds
/// the rating given when item i was presented first; the diagonal holds
/// identical-pair probes when the task rated them.
struct RatingMatrix {
  std::vector<std::string> labels;
  std::vector<std::optional<double>> cells;  // n*n row-major

  RatingMatrix() = default;
  explicit RatingMatrix(std::vector<std::string> lbls)
      : labels(std::move(lbls)), cells(labels.size() * labels.size()) {}

  std::size_t n() const { return labels.size(); }
  std::optional<double>& at(std::size_t i, std::size_t j) { return cells[i * n() + j]; }
  const std::optional<double>& at(std::size_t i, std::size_t j) const { return cells[i * n() + j]; }
};

enum class Provenance { rated, mirrored, derived_from_embeddings };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::rated: return "rated";
    case Provenance::mirrored: return "mirrored";
    case Provenance::derived_from_embeddings: return "derived-from-embeddings";
  }
  return "?";
}

/// Symmetric dissimilarity matrix with values in [0,1] and zero diagonal.
/// Cells whose value was obtained by mirroring a single rated order carry a
/// per-cell mirrored flag (display metadata, not persisted in CSV).
struct Dsm {
  std::vector<std::string> labels;
  std::vector<std::optional<double>> cells;  // n*n, symmetric where present
  Provenance provenance = Provenance::rated;
  bool rescaled_negative_cosine = false;  // set by the embedding baseline path
  std::vector<bool> mirrored_cells;       // empty means none

  Dsm() = default;
  explicit Dsm(std::vector<std::string> lbls)
      : labels(std::move(lbls)), cells(labels.size() * labels.size()) {}

  std::size_t n() const { return labels.size(); }
  std::optional<double>& at(std::size_t i, std::size_t j) { return cells[i * n() + j]; }
  const std::optional<double>& at(std::size_t i, std::size_t j) const { return cells[i * n() + j]; }

  void set_symmetric(std::size_t i, std::size_t j, double v) {
    at(i, j) = v;
    at(j, i) = v;
  }

  bool is_mirrored(std::size_t i, std::size_t j) const {
    return !mirrored_cells.empty() && mirrored_cells[i * n() + j];
  }

  void mark_mirrored(std::size_t i, std::size_t j) {
    if (mirrored_cells.empty()) mirrored_cells.assign(n() * n(), false);
    mirrored_cells[i * n() + j] = true;
    mirrored_cells[j * n() + i] = true;
  }
};

/// Cohort average: a DSM plus the number of contributing participants per cell.
struct GroupDsm {
  Dsm dsm;
  std::vector<int> counts;

  std::size_t n() const { return dsm.n(); }
};

/// Fills a rating matrix from ok-status rating records. Non-ok records leave
/// their cell absent; duplicate fills keep the first value and are reported
/// through `warnings`.
inline RatingMatrix assemble(const std::vector<TrialRecord>& records, const StimulusSet& set,
                             std::vector<std::string>* warnings = nullptr) {
  RatingMatrix m(set.labels());
  for (const auto& r : records) {
    if (r.kind != RecordKind::rating) continue;
    if (r.payload_ids.size() != 2)
      throw Error("rating record with " + std::to_string(r.payload_ids.size()) + " payload ids");
    const auto i = set.index_of(r.payload_ids[0]);
    const auto j = set.index_of(r.payload_ids[1]);
    if (!i || !j)
      throw Error("rating record references id not in stimulus set: " + r.payload_ids[0] + "/" +
                  r.payload_ids[1]);
    if (r.status != TrialStatus::ok) continue;
    if (!r.parsed.is_number())
      throw Error("ok rating record without numeric parsed value");
    auto& cell = m.at(*i, *j);
    if (cell.has_value()) {
      if (warnings)
        warnings->push_back("duplicate rating for (" + r.payload_ids[0] + ", " + r.payload_ids[1] +
                            "); keeping first");
      continue;
    }
    cell = r.parsed.get<double>();
  }
  return m;
}

/// Similarities to dissimilarities: for every unordered pair,
/// d = (100 - mean(available ordered ratings)) / 100; absent when neither
/// order was rated. The diagonal uses rated identical pairs when present and
/// is 0 otherwise.
inline Dsm to_dsm(const RatingMatrix& m) {
  const std::size_t n = m.n();
  Dsm d(m.labels);
  d.provenance = Provenance::rated;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& diag = m.at(i, i);
    d.at(i, i) = diag ? (100.0 - *diag) / 100.0 : 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& fwd = m.at(i, j);
      const auto& rev = m.at(j, i);
      if (!fwd && !rev) continue;
      double s = fwd && rev ? (*fwd + *rev) / 2.0 : (fwd ? *fwd : *rev);
      d.set_symmetric(i, j, (100.0 - s) / 100.0);
      if (!fwd || !rev) d.mark_mirrored(i, j);
    }
  }
  return d;
}

/// Mean |s(i,j) - s(j,i)| over pairs rated in both orders; a diagnostic for
/// order effects in a participant's ratings.
inline std::optional<double> order_asymmetry(const RatingMatrix& m) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m.n(); ++i)
    for (std::size_t j = i + 1; j < m.n(); ++j)
      if (m.at(i, j) && m.at(j, i)) {
        sum += std::abs(*m.at(i, j) - *m.at(j, i));
        ++count;
      }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

/// Human-format data rates each unordered pair exactly once. The single
/// rating (already on the 0-100 scale) is mirrored into both cells so the
/// matrix displays symmetric; flattening reads values equal to the originals.
/// A pair rated in both orders means the input is not human-format.
inline Dsm mirror_human(const RatingMatrix& m) {
  const std::size_t n = m.n();
  Dsm d(m.labels);
  d.provenance = Provenance::mirrored;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& diag = m.at(i, i);
    d.at(i, i) = diag ? (100.0 - *diag) / 100.0 : 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& fwd = m.at(i, j);
      const auto& rev = m.at(j, i);
      if (fwd && rev)
        throw Error("mirror_human: pair (" + m.labels[i] + ", " + m.labels[j] +
                    ") rated in both orders; not human-format data");
      if (!fwd && !rev) continue;
      d.set_symmetric(i, j, (100.0 - (fwd ? *fwd : *rev)) / 100.0);
      d.mark_mirrored(i, j);
    }
  }
  return d;
}

/// Cell-wise mean over the DSMs that have the cell, with counts.
inline GroupDsm group_average(const std::vector<Dsm>& dsms) {
  if (dsms.empty()) throw Error("group_average: empty list");
  const auto& labels = dsms.front().labels;
  for (const auto& d : dsms)
    if (d.labels != labels) throw Error("group_average: label mismatch");

  const std::size_t n = labels.size();
  GroupDsm g;
  g.dsm = Dsm(labels);
  g.dsm.provenance = dsms.front().provenance;
  g.counts.assign(n * n, 0);
  for (std::size_t c = 0; c < n * n; ++c) {
    double sum = 0.0;
    int count = 0;
    for (const auto& d : dsms)
      if (d.cells[c]) {
        sum += *d.cells[c];
        ++count;
      }
    if (count > 0) {
      g.dsm.cells[c] = sum / count;
      g.counts[c] = count;
    }
  }
  return g;
}

/// Flattened analysis vector in the canonical unordered pair order
/// (i < j, row-major), reading the lower-triangle cell (j,i). The diagonal is
/// excluded; absent cells and mask misses are dropped. `pair_positions` maps
/// each kept value back to its canonical pair index.
struct FlattenResult {
  std::vector<double> values;
  std::vector<std::size_t> pair_positions;
};

inline FlattenResult flatten(const Dsm& d, const std::vector<bool>* mask = nullptr) {
  const std::size_t n = d.n();
  FlattenResult out;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++k) {
      if (mask && !(*mask)[k]) continue;
      const auto& cell = d.at(j, i);
      if (!cell) continue;
      out.values.push_back(*cell);
      out.pair_positions.push_back(k);
    }
  }
  return out;
}

/// Constant fill of absent off-diagonal cells (default 0.5, the image of a
/// rating of 50). Visualization only; analysis paths never call this.
inline Dsm fill_missing(Dsm d, double fill = 0.5) {
  if (fill < 0.0 || fill > 1.0) throw Error("fill_missing: fill must be in [0,1]");
  const std::size_t n = d.n();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && !d.at(i, j)) d.at(i, j) = fill;
  return d;
}

namespace detail {

inline std::string format_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace detail

/// DSM CSV: header "label,<id>,...", one row per item, empty cells for absent
/// values. Symmetric matrices are written in full.
inline void write_dsm_csv(const Dsm& d, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "label";
  for (const auto& l : d.labels) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < d.n(); ++i) {
    out << d.labels[i];
    for (std::size_t j = 0; j < d.n(); ++j) {
      out << ',';
      if (d.at(i, j)) out << detail::format_cell(*d.at(i, j));
    }
    out << '\n';
  }
}

inline Dsm read_dsm_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open DSM file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("empty DSM file: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> labels;
  {
    std::istringstream hs(line);
    std::string field;
    bool first = true;
    while (std::getline(hs, field, ',')) {
      if (first) {
        first = false;
        continue;
      }
      labels.push_back(field);
    }
  }
  if (labels.empty()) throw Error("DSM file has no labels: " + path.string());

  Dsm d(labels);
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (row >= d.n()) throw Error("DSM file has too many rows: " + path.string());
    std::istringstream ls(line);
    std::string field;
    std::size_t col = 0;
    bool first = true;
    while (std::getline(ls, field, ',')) {
      if (first) {
        if (field != labels[row])
          throw Error("DSM row label mismatch at row " + std::to_string(row + 2) + " in " + path.string());
        first = false;
        continue;
      }
      if (col >= d.n()) throw Error("DSM row too long at row " + std::to_string(row + 2));
      if (!field.empty()) d.at(row, col) = std::stod(field);
      ++col;
    }
    ++row;
  }
  if (row != d.n()) throw Error("DSM file truncated: " + path.string());

  for (std::size_t i = 0; i < d.n(); ++i)
    for (std::size_t j = i + 1; j < d.n(); ++j) {
      const auto &a = d.at(i, j), &b = d.at(j, i);
      if (a.has_value() != b.has_value() ||
          (a && std::abs(*a - *b) > 1e-9))
        throw Error("DSM file is not symmetric at (" + d.labels[i] + ", " + d.labels[j] + ")");
    }
  return d;
}

}  // namespace simrsa
