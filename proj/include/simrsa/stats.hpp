#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "simrsa/corpus.hpp"
#include "simrsa/dsm.hpp"
#include "simrsa/error.hpp"
#include "simrsa/rng.hpp"

namespace simrsa {

/// Ranks 1..n with tied values receiving the mean rank of their block.
inline std::vector<double> average_ranks(std::span<const double> x) {
  if (x.empty()) throw Error("average_ranks: empty input");
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
    i = j + 1;
  }
  return ranks;
}

namespace detail {

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw Error("undefined correlation: constant vector");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace detail

/// Spearman rank correlation: Pearson correlation of average ranks.
/// Requires length >= 3 and at least two distinct values per vector.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 3) throw Error("spearman: need at least 3 paired values");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return detail::pearson(rx, ry);
}

enum class PValueMethod { permutation, t_approx };

struct PermutationSpec {
  int n_perm = 10000;
  std::uint64_t seed = 0;
};

/// Two-sided p-value for Spearman's r against the no-correlation null.
///
/// permutation: positions of y are permuted. When n! fits within n_perm the
/// full permutation distribution is enumerated and p is exact; otherwise
/// p = (1 + #{|r_perm| >= |r_obs|}) / (n_perm + 1) with each permutation's
/// generator derived from (seed, index) so results do not depend on any
/// parallel execution order.
///
/// t_approx: t = r sqrt((n-2)/(1-r^2)) referred to Student's t with n-2 df.
inline double spearman_pvalue(std::span<const double> x, std::span<const double> y, PValueMethod method,
                              const PermutationSpec& spec = {}) {
  const double r_obs = spearman(x, y);
  const std::size_t n = x.size();

  if (method == PValueMethod::t_approx) {
    const double denom = 1.0 - r_obs * r_obs;
    if (denom <= 0.0) return 0.0;
    const double t = r_obs * std::sqrt((static_cast<double>(n) - 2.0) / denom);
    boost::math::students_t dist(static_cast<double>(n) - 2.0);
    return 2.0 * boost::math::cdf(dist, -std::abs(t));
  }

  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double threshold = std::abs(r_obs) - 1e-12;

  // Exhaustive enumeration when feasible.
  double factorial = 1.0;
  for (std::size_t k = 2; k <= n && factorial <= spec.n_perm; ++k) factorial *= static_cast<double>(k);
  if (factorial <= spec.n_perm) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<double> perm(n);
    long hits = 0, total = 0;
    do {
      for (std::size_t i = 0; i < n; ++i) perm[i] = ry[idx[i]];
      if (std::abs(detail::pearson(rx, perm)) >= threshold) ++hits;
      ++total;
    } while (std::next_permutation(idx.begin(), idx.end()));
    return static_cast<double>(hits) / static_cast<double>(total);
  }

  long hits = 0;
  std::vector<double> perm(ry.begin(), ry.end());
  for (int p = 0; p < spec.n_perm; ++p) {
    Rng rng(derive_seed(spec.seed, "spearman_perm", static_cast<std::uint64_t>(p)));
    perm.assign(ry.begin(), ry.end());
    rng.shuffle(perm);
    if (std::abs(detail::pearson(rx, perm)) >= threshold) ++hits;
  }
  return static_cast<double>(1 + hits) / static_cast<double>(spec.n_perm + 1);
}

struct BonferroniResult {
  bool significant = false;
  double threshold = 0.0;
};

inline BonferroniResult bonferroni(double p, int m, double alpha = 0.05) {
  if (m < 1) throw Error("bonferroni: m must be >= 1");
  BonferroniResult r;
  r.threshold = alpha / static_cast<double>(m);
  r.significant = p < r.threshold;
  return r;
}

struct RankTestReport {
  double w = 0.0;  // rank-sum of the first sample (mid-ranks)
  double p_two_sided = 1.0;
  enum class Method { exact, normal_approx } method = Method::exact;
};

namespace detail {

/// Exact two-sided p for the rank-sum statistic by dynamic programming over
/// doubled mid-ranks (integers even under ties). Counts the k-subsets of the
/// pooled ranks whose sum deviates from its mean by at least the observed
/// deviation.
inline double ranksum_exact_p(const std::vector<long>& doubled_ranks, std::size_t n_first, long w2_obs) {
  const std::size_t total = doubled_ranks.size();
  long sum_all = 0;
  for (long r : doubled_ranks) sum_all += r;
  // doubled mean of the first-sample rank-sum: n*(N+1) since sum_all = N(N+1)
  const long mean2_num = static_cast<long>(n_first) * (static_cast<long>(total) + 1);
  const long dev_obs = std::llabs(w2_obs - mean2_num);

  const long max_sum = sum_all;
  // dp[k][s] = number of k-subsets with doubled-rank sum s
  std::vector<std::vector<std::uint64_t>> dp(n_first + 1,
                                             std::vector<std::uint64_t>(static_cast<std::size_t>(max_sum) + 1, 0));
  dp[0][0] = 1;
  for (std::size_t e = 0; e < total; ++e) {
    const long r = doubled_ranks[e];
    const std::size_t kmax = std::min(n_first, e + 1);
    for (std::size_t k = kmax; k >= 1; --k)
      for (long s = max_sum; s >= r; --s)
        if (dp[k - 1][static_cast<std::size_t>(s - r)])
          dp[k][static_cast<std::size_t>(s)] += dp[k - 1][static_cast<std::size_t>(s - r)];
  }

  std::uint64_t hits = 0, combos = 0;
  for (long s = 0; s <= max_sum; ++s) {
    const std::uint64_t c = dp[n_first][static_cast<std::size_t>(s)];
    if (c == 0) continue;
    combos += c;
    if (std::llabs(s - mean2_num) >= dev_obs) hits += c;
  }
  return static_cast<double>(hits) / static_cast<double>(combos);
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace detail

/// Two-sided Wilcoxon rank-sum test. W is the first sample's rank-sum over
/// the pooled mid-ranks. Exact enumeration (tie-aware) when both samples have
/// at most 12 values; otherwise a normal approximation with tie-corrected
/// variance and continuity correction. `force_method` overrides the size
/// policy (used to compare the two routes on identical data).
inline RankTestReport wilcoxon_ranksum(std::span<const double> a, std::span<const double> b,
                                       std::optional<RankTestReport::Method> force_method = {}) {
  if (a.empty() || b.empty()) throw Error("wilcoxon_ranksum: both samples must be non-empty");
  const std::size_t n = a.size(), m = b.size(), total = n + m;

  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = average_ranks(pooled);

  double w = 0.0;
  for (std::size_t i = 0; i < n; ++i) w += ranks[i];

  RankTestReport report;
  report.w = w;

  const bool exact = force_method ? *force_method == RankTestReport::Method::exact
                                  : (n <= 12 && m <= 12);
  if (exact) {
    report.method = RankTestReport::Method::exact;
    std::vector<long> doubled(total);
    for (std::size_t i = 0; i < total; ++i) doubled[i] = std::lround(2.0 * ranks[i]);
    report.p_two_sided = detail::ranksum_exact_p(doubled, n, std::lround(2.0 * w));
    return report;
  }

  report.method = RankTestReport::Method::normal_approx;
  const double dn = static_cast<double>(n), dm = static_cast<double>(m), N = static_cast<double>(total);
  const double mean = dn * (N + 1.0) / 2.0;

  // tie correction: group pooled values, sum t^3 - t
  std::vector<double> sorted(pooled);
  std::sort(sorted.begin(), sorted.end());
  double tie_sum = 0.0;
  std::size_t i = 0;
  while (i < total) {
    std::size_t j = i;
    while (j + 1 < total && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_sum += t * t * t - t;
    i = j + 1;
  }
  const double var = dn * dm / 12.0 * ((N + 1.0) - tie_sum / (N * (N - 1.0)));
  if (var <= 0.0) {
    report.p_two_sided = 1.0;  // all pooled values identical
    return report;
  }
  const double diff = w - mean;
  const double correction = diff > 0 ? 0.5 : (diff < 0 ? -0.5 : 0.0);
  const double z = (diff - correction) / std::sqrt(var);
  report.p_two_sided = std::min(1.0, 2.0 * detail::normal_sf(std::abs(z)));
  return report;
}

struct IccReport {
  double icc_single = 0.0;
  double icc_average = 0.0;
  std::string model = "two-way random, absolute agreement";
  int subjects = 0;
  int raters = 0;
};

/// Two-way random-effects, absolute-agreement intraclass correlation from the
/// mean-square decomposition of a complete subjects x raters matrix:
///   single  = (MSR - MSE) / (MSR + (k-1) MSE + k (MSC - MSE) / n)
///   average = (MSR - MSE) / (MSR + (MSC - MSE) / n)
inline IccReport icc_two_way(const std::vector<std::vector<double>>& ratings) {
  const std::size_t n = ratings.size();
  if (n < 2) throw Error("icc_two_way: need at least 2 subjects");
  const std::size_t k = ratings.front().size();
  if (k < 2) throw Error("icc_two_way: need at least 2 raters");
  for (const auto& row : ratings) {
    if (row.size() != k) throw Error("icc_two_way: ragged matrix (incomplete data)");
    for (double v : row)
      if (!std::isfinite(v)) throw Error("icc_two_way: incomplete matrix (non-finite cell)");
  }

  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  double grand = 0.0;
  std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      row_mean[i] += ratings[i][j];
      col_mean[j] += ratings[i][j];
      grand += ratings[i][j];
    }
  for (auto& v : row_mean) v /= dk;
  for (auto& v : col_mean) v /= dn;
  grand /= dn * dk;

  double ssr = 0.0, ssc = 0.0, sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) ssr += (row_mean[i] - grand) * (row_mean[i] - grand);
  ssr *= dk;
  for (std::size_t j = 0; j < k; ++j) ssc += (col_mean[j] - grand) * (col_mean[j] - grand);
  ssc *= dn;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double resid = ratings[i][j] - row_mean[i] - col_mean[j] + grand;
      sse += resid * resid;
    }

  const double msr = ssr / (dn - 1.0);
  const double msc = ssc / (dk - 1.0);
  const double mse = sse / ((dn - 1.0) * (dk - 1.0));

  IccReport report;
  report.subjects = static_cast<int>(n);
  report.raters = static_cast<int>(k);

  const double denom_single = msr + (dk - 1.0) * mse + dk * (msc - mse) / dn;
  const double denom_average = msr + (msc - mse) / dn;
  if (denom_single == 0.0 || denom_average == 0.0)
    throw Error("icc_two_way: degenerate matrix (no variance)");
  report.icc_single = (msr - mse) / denom_single;
  report.icc_average = (msr - mse) / denom_average;
  return report;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw Error("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

struct AlignmentReport {
  std::string system_a;
  std::string system_b;
  std::optional<std::string> mask_name;  // "within" / "between" when masked
  double r_s = 0.0;
  double p_raw = 1.0;
  int m_comparisons = 1;
  double alpha = 0.05;
  bool significant_bonferroni = false;
  int n_pairs_used = 0;
};

struct CompareOptions {
  double alpha = 0.05;
  int m_comparisons = 1;
  /// nullopt selects the default policy: t-approximation for n >= 50,
  /// seeded permutation below.
  std::optional<PValueMethod> method;
  PermutationSpec permutation;
  /// Categories keyed by label; enables within/between mask reports.
  const std::map<std::string, Category>* categories = nullptr;
};

namespace detail {

inline double auto_pvalue(std::span<const double> x, std::span<const double> y, const CompareOptions& opts) {
  const PValueMethod method =
      opts.method.value_or(x.size() >= 50 ? PValueMethod::t_approx : PValueMethod::permutation);
  return spearman_pvalue(x, y, method, opts.permutation);
}

/// Restricts a DSM to the given labels, in order.
inline Dsm reindex(const Dsm& d, const std::vector<std::string>& labels) {
  Dsm out(labels);
  out.provenance = d.provenance;
  std::vector<std::size_t> pos(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    bool found = false;
    for (std::size_t j = 0; j < d.labels.size(); ++j)
      if (d.labels[j] == labels[i]) {
        pos[i] = j;
        found = true;
        break;
      }
    if (!found) throw Error("reindex: label not present: " + labels[i]);
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j) out.at(i, j) = d.at(pos[i], pos[j]);
  return out;
}

}  // namespace detail

/// Compares two group-level DSMs: aligns labels, flattens on common support,
/// and reports overall (plus within/between when categories are supplied)
/// Spearman alignment with Bonferroni bookkeeping.
inline std::vector<AlignmentReport> compare_group(const GroupDsm& a, const GroupDsm& b,
                                                  const CompareOptions& opts = {},
                                                  const std::string& name_a = "A",
                                                  const std::string& name_b = "B") {
  std::vector<std::string> common;
  {
    std::set<std::string> in_b(b.dsm.labels.begin(), b.dsm.labels.end());
    for (const auto& l : a.dsm.labels)
      if (in_b.count(l)) common.push_back(l);
  }
  if (common.size() < 3) throw Error("compare_group: need at least 3 common items");

  const Dsm da = detail::reindex(a.dsm, common);
  const Dsm db = detail::reindex(b.dsm, common);

  const std::size_t n = common.size();
  const std::size_t n_pairs = n * (n - 1) / 2;

  std::vector<std::optional<bool>> within_by_pair;  // nullopt when no categories
  if (opts.categories) {
    within_by_pair.resize(n_pairs);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j, ++k) {
        const auto ci = opts.categories->find(common[i]);
        const auto cj = opts.categories->find(common[j]);
        if (ci == opts.categories->end() || cj == opts.categories->end())
          throw Error("compare_group: uncategorized label");
        within_by_pair[k] = ci->second == cj->second;
      }
  }

  const auto fa = flatten(da);
  const auto fb = flatten(db);

  // common support: pair positions present in both
  std::vector<double> xs, ys;
  std::vector<std::size_t> positions;
  {
    std::size_t ia = 0, ib = 0;
    while (ia < fa.pair_positions.size() && ib < fb.pair_positions.size()) {
      if (fa.pair_positions[ia] == fb.pair_positions[ib]) {
        xs.push_back(fa.values[ia]);
        ys.push_back(fb.values[ib]);
        positions.push_back(fa.pair_positions[ia]);
        ++ia, ++ib;
      } else if (fa.pair_positions[ia] < fb.pair_positions[ib]) {
        ++ia;
      } else {
        ++ib;
      }
    }
  }

  auto make_report = [&](const std::vector<double>& x, const std::vector<double>& y,
                         std::optional<std::string> mask_name) {
    AlignmentReport r;
    r.system_a = name_a;
    r.system_b = name_b;
    r.mask_name = std::move(mask_name);
    r.n_pairs_used = static_cast<int>(x.size());
    r.m_comparisons = opts.m_comparisons;
    r.alpha = opts.alpha;
    r.r_s = spearman(x, y);
    r.p_raw = detail::auto_pvalue(x, y, opts);
    r.significant_bonferroni = bonferroni(r.p_raw, opts.m_comparisons, opts.alpha).significant;
    return r;
  };

  std::vector<AlignmentReport> reports;
  reports.push_back(make_report(xs, ys, std::nullopt));

  if (opts.categories) {
    std::vector<double> wx, wy, bx, by;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (*within_by_pair[positions[i]]) {
        wx.push_back(xs[i]);
        wy.push_back(ys[i]);
      } else {
        bx.push_back(xs[i]);
        by.push_back(ys[i]);
      }
    }
    reports.push_back(make_report(wx, wy, "within"));
    reports.push_back(make_report(bx, by, "between"));
  }
  return reports;
}

struct InterSubjectReport {
  std::vector<std::string> participants;
  /// Symmetric pairwise Spearman matrix with unit diagonal; entries are
  /// absent when two participants share fewer than 3 rated pairs (or a
  /// correlation is undefined).
  std::vector<std::vector<std::optional<double>>> pairwise;
  std::vector<std::optional<double>> leave_one_out;
  struct Summary {
    double min = 0.0, med = 0.0, max = 0.0;
  };
  Summary pairwise_summary;
  Summary loo_summary;
  int unavailable_pairs = 0;
};

namespace detail {

inline std::optional<double> spearman_common_support(const Dsm& a, const Dsm& b) {
  const auto fa = flatten(a);
  const auto fb = flatten(b);
  std::vector<double> xs, ys;
  std::size_t ia = 0, ib = 0;
  while (ia < fa.pair_positions.size() && ib < fb.pair_positions.size()) {
    if (fa.pair_positions[ia] == fb.pair_positions[ib]) {
      xs.push_back(fa.values[ia]);
      ys.push_back(fb.values[ib]);
      ++ia, ++ib;
    } else if (fa.pair_positions[ia] < fb.pair_positions[ib]) {
      ++ia;
    } else {
      ++ib;
    }
  }
  if (xs.size() < 3) return std::nullopt;
  try {
    return spearman(xs, ys);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline InterSubjectReport::Summary summarize(const std::vector<double>& values) {
  InterSubjectReport::Summary s;
  if (values.empty()) return s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  s.med = median(values);
  return s;
}

}  // namespace detail

/// Alignment among individual participants: all pairwise Spearman values over
/// common support plus the leave-one-out correlation of each participant with
/// the group average of the rest.
inline InterSubjectReport inter_subject(const std::vector<Dsm>& dsms,
                                        const std::vector<std::string>& names = {}) {
  if (dsms.size() < 2) throw Error("inter_subject: need at least 2 participants");
  const auto& labels = dsms.front().labels;
  for (const auto& d : dsms)
    if (d.labels != labels) throw Error("inter_subject: label mismatch");

  const std::size_t p = dsms.size();
  InterSubjectReport report;
  report.participants.resize(p);
  for (std::size_t i = 0; i < p; ++i)
    report.participants[i] = i < names.size() ? names[i] : "p" + std::to_string(i);

  report.pairwise.assign(p, std::vector<std::optional<double>>(p));
  std::vector<double> pair_values;
  for (std::size_t i = 0; i < p; ++i) {
    report.pairwise[i][i] = 1.0;
    for (std::size_t j = i + 1; j < p; ++j) {
      const auto r = detail::spearman_common_support(dsms[i], dsms[j]);
      report.pairwise[i][j] = r;
      report.pairwise[j][i] = r;
      if (r)
        pair_values.push_back(*r);
      else
        ++report.unavailable_pairs;
    }
  }

  std::vector<double> loo_values;
  report.leave_one_out.resize(p);
  for (std::size_t i = 0; i < p; ++i) {
    std::vector<Dsm> rest;
    rest.reserve(p - 1);
    for (std::size_t j = 0; j < p; ++j)
      if (j != i) rest.push_back(dsms[j]);
    const auto g = group_average(rest);
    const auto r = detail::spearman_common_support(dsms[i], g.dsm);
    report.leave_one_out[i] = r;
    if (r) loo_values.push_back(*r);
  }

  report.pairwise_summary = detail::summarize(pair_values);
  report.loo_summary = detail::summarize(loo_values);
  return report;
}

/// Builds the ICC input block: subjects = unordered pairs, raters =
/// participants, values = similarity ratings in [0,100] (the mean of the two
/// ordered ratings when both were given). Pairs missed by any rater are
/// dropped and counted.
struct IccInput {
  std::vector<std::vector<double>> matrix;  // subjects x raters
  int dropped_pairs = 0;
};

inline IccInput icc_input_from_ratings(const std::vector<RatingMatrix>& participants) {
  if (participants.empty()) throw Error("icc_input_from_ratings: no participants");
  const auto& labels = participants.front().labels;
  for (const auto& m : participants)
    if (m.labels != labels) throw Error("icc_input_from_ratings: label mismatch");

  const std::size_t n = labels.size();
  IccInput input;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      std::vector<double> row;
      row.reserve(participants.size());
      bool complete = true;
      for (const auto& m : participants) {
        const auto& fwd = m.at(i, j);
        const auto& rev = m.at(j, i);
        if (!fwd && !rev) {
          complete = false;
          break;
        }
        row.push_back(fwd && rev ? (*fwd + *rev) / 2.0 : (fwd ? *fwd : *rev));
      }
      if (complete)
        input.matrix.push_back(std::move(row));
      else
        ++input.dropped_pairs;
    }
  return input;
}

/// Same block built from per-participant DSMs, mapping dissimilarity back to
/// the similarity scale: s = 100 (1 - d).
inline IccInput icc_input_from_dsms(const std::vector<Dsm>& participants) {
  if (participants.empty()) throw Error("icc_input_from_dsms: no participants");
  const auto& labels = participants.front().labels;
  for (const auto& d : participants)
    if (d.labels != labels) throw Error("icc_input_from_dsms: label mismatch");

  const std::size_t n = labels.size();
  IccInput input;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      std::vector<double> row;
      row.reserve(participants.size());
      bool complete = true;
      for (const auto& d : participants) {
        const auto& cell = d.at(j, i);
        if (!cell) {
          complete = false;
          break;
        }
        row.push_back(100.0 * (1.0 - *cell));
      }
      if (complete)
        input.matrix.push_back(std::move(row));
      else
        ++input.dropped_pairs;
    }
  return input;
}

}  // namespace simrsa
