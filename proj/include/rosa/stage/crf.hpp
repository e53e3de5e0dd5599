#pragma once

// Linear-chain CRF over per-epoch stage logits: path score, log-partition by the
// forward algorithm, the negative log-likelihood as one fused differentiable op,
// and Viterbi decoding.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "rosa/ad/tensor.hpp"

namespace rosa::stage {

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

inline void check_shapes(std::size_t n_y, std::size_t k, std::size_t n_a) {
  if (k == 0 || n_y % k != 0 || n_a != k * k) throw ShapeError("crf: logits [N, K] and transitions [K, K] required");
}

// alpha[n * K + j] = log-sum of scores of all prefixes ending in j at step n.
inline std::vector<double> forward_table(std::span<const double> y, std::span<const double> A, std::size_t K) {
  const std::size_t N = y.size() / K;
  std::vector<double> alpha(N * K);
  std::vector<double> tmp(K);
  for (std::size_t j = 0; j < K; ++j) alpha[j] = y[j];
  for (std::size_t n = 1; n < N; ++n)
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t i = 0; i < K; ++i) tmp[i] = alpha[(n - 1) * K + i] + A[i * K + j];
      alpha[n * K + j] = y[n * K + j] + log_sum_exp(tmp);
    }
  return alpha;
}

inline std::vector<double> backward_table(std::span<const double> y, std::span<const double> A, std::size_t K) {
  const std::size_t N = y.size() / K;
  std::vector<double> beta(N * K, 0.0);
  std::vector<double> tmp(K);
  for (std::size_t n = N - 1; n-- > 0;)
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) tmp[j] = A[i * K + j] + y[(n + 1) * K + j] + beta[(n + 1) * K + j];
      beta[n * K + i] = log_sum_exp(tmp);
    }
  return beta;
}

}  // namespace detail

/// Sum of transition scores along the path plus the logit of each visited stage.
inline double path_score(std::span<const double> y, std::span<const double> A, std::size_t K,
                         std::span<const std::size_t> path) {
  detail::check_shapes(y.size(), K, A.size());
  if (path.size() * K != y.size()) throw ShapeError("crf: path length differs from logits");
  double g = 0.0;
  for (std::size_t n = 0; n < path.size(); ++n) {
    if (path[n] >= K) throw InvalidArgument("crf: stage index out of range");
    g += y[n * K + path[n]];
    if (n + 1 < path.size()) g += A[path[n] * K + path[n + 1]];
  }
  return g;
}

inline double log_partition(std::span<const double> y, std::span<const double> A, std::size_t K) {
  detail::check_shapes(y.size(), K, A.size());
  if (y.empty()) return 0.0;
  const auto alpha = detail::forward_table(y, A, K);
  return detail::log_sum_exp(std::span<const double>(alpha).subspan(alpha.size() - K));
}

/// log Z - g(truth). logits [N, K], transitions [K, K]. Gradients are the node
/// marginals (logits) and pairwise marginals (transitions) minus the truth counts.
inline ad::Tensor crf_nll(const ad::Tensor& logits, const ad::Tensor& transitions, std::span<const std::size_t> truth) {
  if (logits.rank() != 2 || transitions.rank() != 2) throw ShapeError("crf_nll: expected [N, K] and [K, K]");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  detail::check_shapes(logits.numel(), K, transitions.numel());
  if (truth.size() != N) throw ShapeError("crf_nll: truth length differs from logits");
  if (N == 0) return ad::Tensor::scalar(0.0);
  auto y = logits.data();
  auto A = transitions.data();
  auto alpha = detail::forward_table(y, A, K);
  const double logz = detail::log_sum_exp(std::span<const double>(alpha).subspan((N - 1) * K));
  const double gold = path_score(y, A, K, truth);
  std::vector<std::size_t> path(truth.begin(), truth.end());
  return ad::detail::make_result({}, {logz - gold}, {logits, transitions},
                                 [N, K, path, alpha = std::move(alpha), logz](ad::detail::Node& self) {
    auto& py = *self.parents[0];
    auto& pa = *self.parents[1];
    const double go = self.grad[0];
    const auto beta = detail::backward_table(py.value, pa.value, K);
    if (py.requires_grad) {
      auto& g = py.ensure_grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) g[n * K + k] += go * std::exp(alpha[n * K + k] + beta[n * K + k] - logz);
        g[n * K + path[n]] -= go;
      }
    }
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t n = 0; n + 1 < N; ++n) {
        for (std::size_t i = 0; i < K; ++i)
          for (std::size_t j = 0; j < K; ++j)
            g[i * K + j] += go * std::exp(alpha[n * K + i] + pa.value[i * K + j] + py.value[(n + 1) * K + j] +
                                          beta[(n + 1) * K + j] - logz);
        g[path[n] * K + path[n + 1]] -= go;
      }
    }
  });
}

/// Highest-scoring path. Ties go to the lower stage index, both in the back
/// pointers and in the final state.
inline std::vector<std::size_t> viterbi_decode(std::span<const double> y, std::span<const double> A, std::size_t K) {
  detail::check_shapes(y.size(), K, A.size());
  const std::size_t N = y.size() / K;
  if (N == 0) return {};
  std::vector<double> delta(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(K));
  std::vector<double> next(K);
  std::vector<std::size_t> back(N * K, 0);
  for (std::size_t n = 1; n < N; ++n) {
    for (std::size_t j = 0; j < K; ++j) {
      std::size_t best = 0;
      double v = delta[0] + A[j];
      for (std::size_t i = 1; i < K; ++i) {
        const double c = delta[i] + A[i * K + j];
        if (c > v) {
          v = c;
          best = i;
        }
      }
      next[j] = v + y[n * K + j];
      back[n * K + j] = best;
    }
    delta.swap(next);
  }
  std::vector<std::size_t> path(N);
  path[N - 1] = static_cast<std::size_t>(std::max_element(delta.begin(), delta.end()) - delta.begin());
  for (std::size_t n = N - 1; n > 0; --n) path[n - 1] = back[n * K + path[n]];
  return path;
}

}  // namespace rosa::stage
