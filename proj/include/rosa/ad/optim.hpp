#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "rosa/ad/tensor.hpp"

namespace rosa::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// lr(e) = lr_min + (lr_max - lr_min) * (1 + cos(pi * e / period)) / 2, held at lr_min past the period.
struct CosineSchedule {
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double period = 100;

  double at(double epoch) const {
    if (period <= 0) return lr_max;
    const double e = std::clamp(epoch, 0.0, period);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * e / period));
  }
};

struct TrainConfig {
  AdamConfig adam;
  CosineSchedule schedule;
  int epochs = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(adam.lr > 0) || !(schedule.lr_max > 0)) throw InvalidArgument("TrainConfig: learning rate must be > 0");
    if (epochs <= 0) throw InvalidArgument("TrainConfig: epochs must be > 0");
  }
};

enum class NonFinitePolicy { Skip, Reject };

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}, NonFinitePolicy policy = NonFinitePolicy::Skip)
      : cfg_(cfg), policy_(policy) {}

  /// Applies one update at learning rate `lr`. Returns false when the step was
  /// skipped because a gradient was non-finite (Skip policy).
  bool step(ParameterList& params, double lr) {
    if (m_.size() != params.size()) {
      m_.clear();
      v_.clear();
      for (auto& p : params) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
      }
    }
    for (auto& p : params) {
      for (double g : p.tensor.grad()) {
        if (!std::isfinite(g)) {
          if (policy_ == NonFinitePolicy::Reject) throw NumericError("Adam: non-finite gradient in " + p.name);
          ++skipped_;
          return false;
        }
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto g = params[k].tensor.grad();
      auto w = params[k].tensor.mutable_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        w[i] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
    return true;
  }

  std::uint64_t steps() const { return t_; }
  std::uint64_t skipped() const { return skipped_; }

 private:
  AdamConfig cfg_;
  NonFinitePolicy policy_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
  std::uint64_t skipped_ = 0;
};

/// Copies of every parameter's values, in list order.
inline std::vector<std::vector<double>> snapshot_values(const ParameterList& ps) {
  std::vector<std::vector<double>> s;
  s.reserve(ps.size());
  for (const auto& p : ps) s.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return s;
}

inline void restore_values(ParameterList& ps, const std::vector<std::vector<double>>& s) {
  if (s.size() != ps.size()) throw ShapeError("restore_values: snapshot does not match parameter list");
  for (std::size_t i = 0; i < ps.size(); ++i) std::copy(s[i].begin(), s[i].end(), ps[i].tensor.mutable_data().begin());
}

}  // namespace rosa::ad
