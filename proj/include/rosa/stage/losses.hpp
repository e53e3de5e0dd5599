#pragma once

#include <array>
#include <span>
#include <vector>

#include "rosa/ad/ops.hpp"
#include "rosa/core/labels.hpp"
#include "rosa/stage/crf.hpp"

namespace rosa::stage {

/// -(1/N) sum_n w[s_n] (1 - p_n[s_n])^2 log p_n[s_n], p = softmax over each row.
inline ad::Tensor focal_loss(const ad::Tensor& logits, std::span<const std::size_t> truth,
                             std::span<const double> class_weights = {}) {
  if (logits.rank() != 2 || truth.size() != logits.dim(0)) throw ShapeError("focal_loss: logits [N, K] and N labels required");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (!class_weights.empty() && class_weights.size() != K) throw ShapeError("focal_loss: one weight per class");
  if (N == 0) return ad::Tensor::scalar(0.0);
  std::vector<std::size_t> idx(truth.begin(), truth.end());
  const auto logp = ad::gather_cols(ad::log_softmax(logits), idx);
  const auto miss = ad::square(ad::affine(ad::exp(logp), -1.0, 1.0));
  std::vector<double> w(N, 1.0);
  if (!class_weights.empty())
    for (std::size_t n = 0; n < N; ++n) w[n] = class_weights[truth[n]];
  const auto weighted = ad::mul(ad::mul(miss, logp), ad::Tensor::from({N}, w));
  return ad::scale(ad::sum(weighted), -1.0 / static_cast<double>(N));
}

/// (1/(N-1)) sum_n ||y_n - y_{n-1}||^2; zero for a single epoch.
inline ad::Tensor change_loss(const ad::Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("change_loss: logits [N, K] required");
  const std::size_t N = logits.dim(0);
  if (N < 2) return ad::Tensor::scalar(0.0);
  const auto d = ad::sub(ad::slice(logits, 0, 1, N), ad::slice(logits, 0, 0, N - 1));
  return ad::scale(ad::sum(ad::square(d)), 1.0 / static_cast<double>(N - 1));
}

struct DurationConfig {
  // Minimum durations (s) indexed by Stage: W, N1, N2, N3, R.
  std::array<double, kNumStages> min_duration{60, 30, 30, 60, 60};
  double unit = 30.0;  // d, one epoch
  // Literal printed recurrence, with C_{n-1} in the slot where p_{n-1} belongs.
  bool printed_recurrence = false;
  // Divide by (N - 1) * unit so the term is per epoch and per unit duration.
  bool normalized = false;
};

/// sum_{n>=1} sum_i ReLU(T_i - C_{n-1,i}) (1 - p_{n,i}) with
/// C_0 = 0 and C_n = p_{n-1} (C_{n-1} + d) + (1 - p_{n-1}) d.
inline ad::Tensor duration_loss(const ad::Tensor& logits, const DurationConfig& cfg = {}) {
  if (logits.rank() != 2 || logits.dim(1) != kNumStages) throw ShapeError("duration_loss: logits [N, 5] required");
  const std::size_t N = logits.dim(0), K = kNumStages;
  if (N < 2) return ad::Tensor::scalar(0.0);
  const auto p = ad::softmax(logits);
  const auto T = ad::Tensor::from({K}, std::vector<double>(cfg.min_duration.begin(), cfg.min_duration.end()));
  auto row = [&](std::size_t n) { return ad::reshape(ad::slice(p, 0, n, n + 1), {K}); };
  ad::Tensor C = ad::Tensor::zeros({K});
  ad::Tensor prev = row(0);
  std::vector<ad::Tensor> terms;
  terms.reserve(N - 1);
  for (std::size_t n = 1; n < N; ++n) {
    const auto cur = row(n);
    terms.push_back(ad::mul(ad::relu(ad::sub(T, C)), ad::affine(cur, -1.0, 1.0)));
    const auto stay = ad::mul(prev, ad::affine(C, 1.0, cfg.unit));
    const auto leave = cfg.printed_recurrence ? ad::affine(C, -cfg.unit, cfg.unit) : ad::affine(prev, -cfg.unit, cfg.unit);
    C = ad::add(stay, leave);
    prev = cur;
  }
  auto total = ad::sum(ad::concat(terms, 0));
  if (cfg.normalized) total = ad::scale(total, 1.0 / (static_cast<double>(N - 1) * cfg.unit));
  return total;
}

struct LossWeights {
  double alpha = 1.0;  // focal
  double beta = 1.0;   // change
  double gamma = 1.0;  // duration
  double eta = 0.0;    // CRF
};

struct LossParts {
  ad::Tensor focal, change, duration, crf;  // crf undefined when eta == 0
};

/// Weighted sum of the defined components; a zero weight drops its term entirely.
inline ad::Tensor total_loss(const LossWeights& w, const LossParts& parts) {
  ad::Tensor t = ad::Tensor::scalar(0.0);
  auto add = [&](double c, const ad::Tensor& x) {
    if (c != 0.0 && x.defined()) t = ad::add(t, ad::scale(x, c));
  };
  add(w.alpha, parts.focal);
  add(w.beta, parts.change);
  add(w.gamma, parts.duration);
  add(w.eta, parts.crf);
  return t;
}

}  // namespace rosa::stage
