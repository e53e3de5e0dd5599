#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosa/preproc/spectrogram.hpp"

namespace rosa::preproc {

/// Frozen per-channel statistics. Power channels are log-compressed then
/// standardized; the doppler channel is only divided by the slow-time Nyquist.
struct NormStats {
  bool log_power = true;
  double log_floor = 1e-10;
  std::array<double, 2> mean{0.0, 0.0};  // x_M, x_B in the compressed domain
  std::array<double, 2> sd{1.0, 1.0};
  double doppler_scale = 1.0;            // divide x_D by this
  std::array<bool, 2> zero_variance{false, false};

  static NormStats identity() {
    NormStats s;
    s.log_power = false;
    return s;
  }

  nlohmann::json to_json() const {
    return {{"log_power", log_power}, {"log_floor", log_floor}, {"mean", mean}, {"sd", sd},
            {"doppler_scale", doppler_scale}, {"zero_variance", zero_variance}};
  }
  static NormStats from_json(const nlohmann::json& j) {
    NormStats s;
    s.log_power = j.at("log_power");
    s.log_floor = j.at("log_floor");
    s.mean = j.at("mean");
    s.sd = j.at("sd");
    s.doppler_scale = j.at("doppler_scale");
    s.zero_variance = j.at("zero_variance");
    return s;
  }
};

inline double compress(const NormStats& s, double v) { return s.log_power ? std::log(std::max(v, 0.0) + s.log_floor) : v; }

/// Statistics over every (bin, frame) of the training stacks.
inline NormStats fit_norm_stats(const std::vector<const SpectrogramStack*>& training) {
  if (training.empty()) throw InvalidArgument("fit_norm_stats: no training stacks");
  NormStats s;
  s.doppler_scale = training.front()->slow_rate / 2.0;
  for (std::size_t c = 0; c < 2; ++c) {
    double n = 0, sum = 0;
    for (const auto* st : training)
      for (double v : st->channel(static_cast<Channel>(c))) {
        sum += compress(s, v);
        n += 1;
      }
    if (n == 0) throw InvalidArgument("fit_norm_stats: empty training stacks");
    const double mean = sum / n;
    double ss = 0;
    for (const auto* st : training)
      for (double v : st->channel(static_cast<Channel>(c))) ss += (compress(s, v) - mean) * (compress(s, v) - mean);
    const double sd = std::sqrt(ss / n);
    s.mean[c] = mean;
    // Relative test so large constant channels are still caught.
    s.zero_variance[c] = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
    s.sd[c] = s.zero_variance[c] ? 1.0 : sd;
  }
  return s;
}

inline SpectrogramStack normalize_stack(const SpectrogramStack& in, const NormStats& s) {
  SpectrogramStack out = in;
  for (std::size_t c = 0; c < 2; ++c) {
    auto ch = out.channel(static_cast<Channel>(c));
    for (double& v : ch) {
      v = (compress(s, v) - s.mean[c]) / s.sd[c];
      if (!std::isfinite(v)) throw NumericError("normalize_stack: non-finite value");
    }
  }
  for (double& v : out.channel(Channel::Doppler)) v /= s.doppler_scale;
  return out;
}

}  // namespace rosa::preproc
