#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "simrsa/error.hpp"

namespace simrsa {
namespace detail {

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major, n x n).
/// Eigenpairs come back sorted by decreasing eigenvalue. Deterministic; fine
/// for the desk-scale matrices used here.
struct EigenResult {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;  // vectors[k] is the k-th eigenvector
};

inline EigenResult jacobi_eigen(std::vector<double> a, std::size_t n) {
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

  auto off_diag = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a[i * n + j] * a[i * n + j];
    return s;
  };

  for (int sweep = 0; sweep < 100 && off_diag() > 1e-24; ++sweep) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double app = a[p * n + p], aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });

  EigenResult result;
  result.values.resize(n);
  result.vectors.assign(n, std::vector<double>(n));
  for (std::size_t k = 0; k < n; ++k) {
    result.values[k] = a[order[k] * n + order[k]];
    for (std::size_t i = 0; i < n; ++i) result.vectors[k][i] = v[i][order[k]];
  }
  return result;
}

}  // namespace detail

struct PcaResult {
  std::vector<std::vector<double>> scores;      // N x k projection
  std::vector<double> component_variance;      // top-k eigenvalues of the covariance
  std::vector<double> explained_variance_ratio; // eigenvalue / total variance
};

/// Projects the column-centered data onto its top-k principal components,
/// ordered by decreasing variance. Uses the covariance (D x D) or Gram
/// (N x N) eigenproblem, whichever is smaller. Component signs are fixed so
/// the largest-magnitude loading is positive.
inline PcaResult pca(const std::vector<std::vector<double>>& data, int k) {
  const std::size_t n = data.size();
  if (n == 0) throw Error("pca: empty data");
  const std::size_t d = data.front().size();
  for (const auto& row : data) {
    if (row.size() != d) throw Error("pca: ragged data");
    for (double v : row)
      if (!std::isfinite(v)) throw Error("pca: non-finite input");
  }
  if (k < 1 || static_cast<std::size_t>(k) > std::min(n, d))
    throw Error("pca: k must satisfy 1 <= k <= min(N, D)");

  std::vector<double> mean(d, 0.0);
  for (const auto& row : data)
    for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
  for (auto& m : mean) m /= static_cast<double>(n);

  std::vector<std::vector<double>> centered(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered[i][j] = data[i][j] - mean[j];

  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  double total_variance = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += centered[i][j] * centered[i][j];
    total_variance += s / denom;
  }

  // loadings[c] is a unit vector in feature space for component c
  std::vector<std::vector<double>> loadings;
  std::vector<double> eigenvalues;

  if (d <= n) {
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) cov[a * d + b] += centered[i][a] * centered[i][b];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) {
        cov[a * d + b] /= denom;
        cov[b * d + a] = cov[a * d + b];
      }
    auto eig = detail::jacobi_eigen(std::move(cov), d);
    for (int c = 0; c < k; ++c) {
      eigenvalues.push_back(std::max(0.0, eig.values[c]));
      loadings.push_back(eig.vectors[c]);
    }
  } else {
    std::vector<double> gram(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        double s = 0.0;
        for (std::size_t f = 0; f < d; ++f) s += centered[i][f] * centered[j][f];
        gram[i * n + j] = s / denom;
        gram[j * n + i] = gram[i * n + j];
      }
    auto eig = detail::jacobi_eigen(std::move(gram), n);
    for (int c = 0; c < k; ++c) {
      const double lambda = std::max(0.0, eig.values[c]);
      eigenvalues.push_back(lambda);
      std::vector<double> load(d, 0.0);
      if (lambda > 1e-12 * std::max(1.0, total_variance)) {
        const double scale = 1.0 / std::sqrt(lambda * denom);
        for (std::size_t f = 0; f < d; ++f) {
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) s += centered[i][f] * eig.vectors[c][i];
          load[f] = s * scale;
        }
      }
      loadings.push_back(std::move(load));
    }
  }

  // deterministic sign: largest-|loading| coordinate positive
  for (auto& load : loadings) {
    std::size_t arg = 0;
    for (std::size_t f = 1; f < load.size(); ++f)
      if (std::abs(load[f]) > std::abs(load[arg])) arg = f;
    if (load[arg] < 0.0)
      for (auto& x : load) x = -x;
  }

  PcaResult result;
  result.component_variance = eigenvalues;
  result.explained_variance_ratio.resize(eigenvalues.size());
  for (std::size_t c = 0; c < eigenvalues.size(); ++c)
    result.explained_variance_ratio[c] = total_variance > 0.0 ? eigenvalues[c] / total_variance : 0.0;

  result.scores.assign(n, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t f = 0; f < d; ++f) s += centered[i][f] * loadings[c][f];
      result.scores[i][c] = s;
    }
  return result;
}

}  // namespace simrsa
