#pragma once

#include <cmath>

#include "rosa/ad/tensor.hpp"
#include "rosa/core/rng.hpp"

namespace rosa::ad {

/// Uniform in [-sqrt(6 / fan_in), sqrt(6 / fan_in)] (He/Kaiming uniform).
inline Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

inline Tensor constant_param(Shape shape, double value) {
  return Tensor::from(shape, std::vector<double>(numel_of(shape), value), true);
}

}  // namespace rosa::ad
