#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "rosa/ad/tensor.hpp"

namespace rosa::detect {

struct RoiAlignOptions {
  std::size_t bins = 7;
  std::size_t samples = 2;  // per bin
};

struct Interval {
  double t_start = 0.0;
  double t_end = 0.0;
};

namespace detail {

// Linear interpolation weights at time t on a map whose step j is centred at (j + 0.5) * stride.
// Positions outside the map are clamped to its end steps.
struct Tap {
  std::size_t j0 = 0, j1 = 0;
  double w0 = 1.0, w1 = 0.0;
};

inline Tap tap_at(double t, double stride, std::size_t steps) {
  const double last = static_cast<double>(steps - 1);
  const double u = std::clamp(t / stride - 0.5, 0.0, last);
  Tap tp;
  tp.j0 = static_cast<std::size_t>(std::floor(u));
  if (tp.j0 >= steps - 1) {
    tp.j0 = tp.j1 = steps - 1;
    return tp;
  }
  tp.j1 = tp.j0 + 1;
  tp.w1 = u - static_cast<double>(tp.j0);
  tp.w0 = 1.0 - tp.w1;
  return tp;
}

}  // namespace detail

/// fmap [C, T] sampled over each interval into `bins` cells, each the mean of
/// `samples` evenly spaced linear-interpolated points. Returns [R, C * bins].
inline ad::Tensor roi_align_1d(const ad::Tensor& fmap, double stride, const std::vector<Interval>& rois,
                               RoiAlignOptions opt = {}) {
  if (fmap.rank() != 2 || fmap.dim(1) == 0) throw ShapeError("roi_align_1d: expected [C, T], got " + ad::shape_str(fmap.shape()));
  if (!(stride > 0) || opt.bins == 0 || opt.samples == 0) throw InvalidArgument("roi_align_1d: bad options");
  const std::size_t C = fmap.dim(0), T = fmap.dim(1), B = opt.bins, S = opt.samples;
  const std::size_t R = rois.size();
  // taps[r][b * S + s]
  std::vector<detail::Tap> taps(R * B * S);
  for (std::size_t r = 0; r < R; ++r) {
    const double len = (rois[r].t_end - rois[r].t_start) / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t s = 0; s < S; ++s) {
        const double t = rois[r].t_start + (static_cast<double>(b) + (static_cast<double>(s) + 0.5) / S) * len;
        taps[(r * B + b) * S + s] = detail::tap_at(t, stride, T);
      }
  }
  const double inv = 1.0 / static_cast<double>(S);
  std::vector<double> out(R * C * B, 0.0);
  auto fv = fmap.data();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t b = 0; b < B; ++b) {
        double acc = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
          const auto& tp = taps[(r * B + b) * S + s];
          acc += tp.w0 * fv[c * T + tp.j0] + tp.w1 * fv[c * T + tp.j1];
        }
        out[(r * C + c) * B + b] = acc * inv;
      }
  return ad::detail::make_result({R, C * B}, std::move(out), {fmap}, [=](ad::detail::Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t b = 0; b < B; ++b) {
          const double d = self.grad[(r * C + c) * B + b] * inv;
          for (std::size_t s = 0; s < S; ++s) {
            const auto& tp = taps[(r * B + b) * S + s];
            g[c * T + tp.j0] += d * tp.w0;
            g[c * T + tp.j1] += d * tp.w1;
          }
        }
  });
}

}  // namespace rosa::detect
