#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "simrsa/error.hpp"
#include "simrsa/pca.hpp"
#include "simrsa/rng.hpp"

namespace simrsa {

struct TsneParams {
  double perplexity = 30.0;
  int max_iter = 5000;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;
  double momentum_initial = 0.5;
  double momentum_final = 0.8;
  int momentum_switch_iter = 250;
  double early_exaggeration = 12.0;
  int exaggeration_iters = 250;
  double entropy_tolerance = 1e-5;
  int entropy_max_steps = 200;
  double min_gain = 0.01;
  double init_scale = 1e-4;   // std of the PCA-initialized embedding
  double init_jitter = 1e-8;  // seeded noise added to the init
};

struct EmbeddingLayout {
  std::vector<std::string> labels;
  std::vector<std::array<double, 2>> coordinates;
  TsneParams params;
  double final_kl = 0.0;
  double max_entropy_error = 0.0;  // worst |H - log(perplexity)| over points
};

namespace tsne_detail {

inline std::vector<double> squared_distances(const std::vector<std::vector<double>>& data) {
  const std::size_t n = data.size();
  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t f = 0; f < data[i].size(); ++f) {
        const double diff = data[i][f] - data[j][f];
        s += diff * diff;
      }
      d2[i * n + j] = s;
      d2[j * n + i] = s;
    }
  return d2;
}

}  // namespace tsne_detail

/// Symmetric, normalized input affinities. Per-point Gaussian precisions are
/// found by binary search so the conditional distribution's entropy hits
/// log(perplexity) within `entropy_tolerance` (in nats); the worst residual
/// is reported through `max_entropy_error`.
inline std::vector<double> tsne_input_probabilities(const std::vector<std::vector<double>>& data,
                                                    double perplexity, double entropy_tolerance,
                                                    int max_steps, double* max_entropy_error = nullptr) {
  const std::size_t n = data.size();
  if (n < 4) throw Error("tsne: need at least 4 points");
  if (perplexity >= static_cast<double>(n)) throw Error("tsne: perplexity must be < N");
  if (perplexity <= 0.0) throw Error("tsne: perplexity must be positive");

  const auto d2 = tsne_detail::squared_distances(data);
  const double target_entropy = std::log(perplexity);

  std::vector<double> p(n * n, 0.0);  // conditional p_{j|i} in row i
  double worst = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0;
    double beta_min = -std::numeric_limits<double>::infinity();
    double beta_max = std::numeric_limits<double>::infinity();
    double entropy = 0.0;

    for (int step = 0; step < max_steps; ++step) {
      double sum_p = 0.0, sum_dp = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
          p[i * n + j] = 0.0;
          continue;
        }
        const double pj = std::exp(-beta * d2[i * n + j]);
        p[i * n + j] = pj;
        sum_p += pj;
        sum_dp += pj * d2[i * n + j];
      }
      if (sum_p <= 0.0) {
        // beta overshot every neighbor into underflow; back off
        beta_max = beta;
        beta = (std::isinf(beta_min)) ? beta / 2.0 : (beta + beta_min) / 2.0;
        continue;
      }
      entropy = std::log(sum_p) + beta * sum_dp / sum_p;
      const double diff = entropy - target_entropy;
      if (std::abs(diff) <= entropy_tolerance) break;
      if (diff > 0.0) {
        beta_min = beta;
        beta = std::isinf(beta_max) ? beta * 2.0 : (beta + beta_max) / 2.0;
      } else {
        beta_max = beta;
        beta = std::isinf(beta_min) ? beta / 2.0 : (beta + beta_min) / 2.0;
      }
    }
    worst = std::max(worst, std::abs(entropy - target_entropy));

    double sum_p = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum_p += p[i * n + j];
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] = sum_p > 0.0 ? p[i * n + j] / sum_p : 0.0;
  }
  if (max_entropy_error) *max_entropy_error = worst;

  // symmetrize: p_ij = (p_{j|i} + p_{i|j}) / (2N), then normalize to sum 1
  std::vector<double> sym(n * n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = (p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n));
      sym[i * n + j] = v;
      sym[j * n + i] = v;
      total += 2.0 * v;
    }
  if (total > 0.0)
    for (auto& v : sym) v /= total;
  return sym;
}

/// KL divergence between the input affinities P and the Student-t affinities
/// of the embedding Y (flat N x 2).
inline double tsne_kl(const std::vector<double>& p, const std::vector<double>& y, std::size_t n) {
  constexpr double kEps = 1e-12;
  double sum_w = 0.0;
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = y[2 * i] - y[2 * j];
      const double dy = y[2 * i + 1] - y[2 * j + 1];
      const double wij = 1.0 / (1.0 + dx * dx + dy * dy);
      w[i * n + j] = wij;
      w[j * n + i] = wij;
      sum_w += 2.0 * wij;
    }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double pij = std::max(p[i * n + j], kEps);
      const double qij = std::max(w[i * n + j] / sum_w, kEps);
      kl += pij * std::log(pij / qij);
    }
  return kl;
}

/// Exact KL gradient: dC/dy_i = 4 sum_j (p_ij - q_ij) w_ij (y_i - y_j).
inline std::vector<double> tsne_gradient(const std::vector<double>& p, const std::vector<double>& y,
                                         std::size_t n) {
  double sum_w = 0.0;
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = y[2 * i] - y[2 * j];
      const double dy = y[2 * i + 1] - y[2 * j + 1];
      const double wij = 1.0 / (1.0 + dx * dx + dy * dy);
      w[i * n + j] = wij;
      w[j * n + i] = wij;
      sum_w += 2.0 * wij;
    }
  std::vector<double> grad(2 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double gx = 0.0, gy = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double wij = w[i * n + j];
      const double mult = (p[i * n + j] - wij / sum_w) * wij;
      gx += mult * (y[2 * i] - y[2 * j]);
      gy += mult * (y[2 * i + 1] - y[2 * j + 1]);
    }
    grad[2 * i] = 4.0 * gx;
    grad[2 * i + 1] = 4.0 * gy;
  }
  return grad;
}

/// Exact t-SNE to two dimensions: PCA initialization, early exaggeration,
/// momentum + adaptive gains. Deterministic for a fixed seed.
inline EmbeddingLayout tsne(const std::vector<std::vector<double>>& data, const TsneParams& params,
                            std::vector<std::string> labels = {}) {
  const std::size_t n = data.size();
  double entropy_error = 0.0;
  auto p = tsne_input_probabilities(data, params.perplexity, params.entropy_tolerance,
                                    params.entropy_max_steps, &entropy_error);

  // PCA init, rescaled to init_scale std plus a seeded jitter
  std::vector<double> y(2 * n, 0.0);
  {
    const int k = std::min<std::size_t>(2, std::min(n, data.front().size()));
    const auto init = pca(data, k);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += init.scores[i][0] * init.scores[i][0];
    var /= static_cast<double>(n);
    const double scale = var > 0.0 ? params.init_scale / std::sqrt(var) : 1.0;
    Rng rng(derive_seed(params.seed, "tsne_init"));
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] = init.scores[i][0] * scale + rng.normal(0.0, params.init_jitter);
      y[2 * i + 1] = (k > 1 ? init.scores[i][1] * scale : 0.0) + rng.normal(0.0, params.init_jitter);
    }
  }

  std::vector<double> increment(2 * n, 0.0);
  std::vector<double> gains(2 * n, 1.0);

  const double exaggeration = params.early_exaggeration;
  if (exaggeration != 1.0 && params.exaggeration_iters > 0)
    for (auto& v : p) v *= exaggeration;

  for (int iter = 0; iter < params.max_iter; ++iter) {
    if (iter == params.exaggeration_iters && exaggeration != 1.0 && params.exaggeration_iters > 0)
      for (auto& v : p) v /= exaggeration;

    const auto grad = tsne_gradient(p, y, n);
    const double momentum =
        iter < params.momentum_switch_iter ? params.momentum_initial : params.momentum_final;

    double mean_x = 0.0, mean_y = 0.0;
    for (std::size_t c = 0; c < 2 * n; ++c) {
      const bool same_sign = (grad[c] > 0.0) == (increment[c] > 0.0);
      gains[c] = same_sign ? gains[c] * 0.8 : gains[c] + 0.2;
      gains[c] = std::max(gains[c], params.min_gain);
      increment[c] = momentum * increment[c] - params.learning_rate * gains[c] * grad[c];
      y[c] += increment[c];
      if (c % 2 == 0)
        mean_x += y[c];
      else
        mean_y += y[c];
    }
    mean_x /= static_cast<double>(n);
    mean_y /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mean_x;
      y[2 * i + 1] -= mean_y;
    }
  }

  // report KL against the unexaggerated affinities
  if (params.max_iter <= params.exaggeration_iters && exaggeration != 1.0 && params.exaggeration_iters > 0)
    for (auto& v : p) v /= exaggeration;

  EmbeddingLayout layout;
  layout.params = params;
  layout.max_entropy_error = entropy_error;
  layout.final_kl = tsne_kl(p, y, n);
  layout.coordinates.resize(n);
  for (std::size_t i = 0; i < n; ++i) layout.coordinates[i] = {y[2 * i], y[2 * i + 1]};
  if (labels.empty()) {
    layout.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) layout.labels[i] = "p" + std::to_string(i);
  } else {
    if (labels.size() != n) throw Error("tsne: label count mismatch");
    layout.labels = std::move(labels);
  }
  return layout;
}

}  // namespace simrsa
