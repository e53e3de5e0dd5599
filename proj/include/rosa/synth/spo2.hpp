#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rosa/core/labels.hpp"
#include "rosa/core/rng.hpp"
#include "rosa/synth/profile.hpp"

namespace rosa::synth {

struct DesaturationShape {
  double fall = 10.0;  // s, linear descent to the nadir
  double hold = 4.0;   // s at the nadir
  double rise = 15.0;  // s, linear re-saturation
};

/// Fraction of full depth reached `dt` seconds after desaturation onset.
inline double desaturation_profile(double dt, const DesaturationShape& s) {
  if (dt <= 0) return 0.0;
  if (dt < s.fall) return dt / s.fall;
  if (dt <= s.fall + s.hold) return 1.0;
  if (dt < s.fall + s.hold + s.rise) return 1.0 - (dt - s.fall - s.hold) / s.rise;
  return 0.0;
}

/// 1 Hz trace. profile.od_coupling[i] applies to truth_events[i]. Overlapping desaturations combine by the deeper one.
inline SpO2Trace synthesize_spo2(const SubjectProfile& profile, const std::vector<AnnotatedEvent>& truth_events,
                                 const DesaturationShape& shape = {}) {
  const auto n = static_cast<std::size_t>(std::floor(profile.duration));
  std::vector<double> dip(n, 0.0);
  if (!profile.od_coupling.empty()) {
    if (profile.od_coupling.size() != truth_events.size()) {
      throw InvalidArgument("synthesize_spo2: od_coupling does not match events");
    }
    for (std::size_t e = 0; e < truth_events.size(); ++e) {
      const auto& c = profile.od_coupling[e];
      if (c.depth == 0) continue;
      const double onset = truth_events[e].t_end + c.delay;
      const double stop = onset + shape.fall + shape.hold + shape.rise;
      for (auto i = static_cast<std::size_t>(std::max(0.0, std::floor(onset))); i < n && i <= stop; ++i) {
        dip[i] = std::max(dip[i], c.depth * desaturation_profile(static_cast<double>(i) - onset, shape));
      }
    }
  }
  Rng rng(Rng::mix(profile.seed, 0x5702));
  SpO2Trace trace;
  trace.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    int v = profile.spo2_baseline - static_cast<int>(std::lround(dip[i]));
    if (profile.spo2_jitter > 0) {
      v += static_cast<int>(rng.below(2 * profile.spo2_jitter + 1)) - profile.spo2_jitter;
    }
    trace.values[i] = static_cast<std::uint8_t>(std::clamp(v, 1, 100));
  }
  if (profile.spo2_fluctuations) {
    // Brief 1-point dips shorter than 10 s, placed only on undisturbed baseline.
    for (std::size_t start = 60; start + 20 < n; start += 90 + rng.below(120)) {
      const std::size_t len = 2 + rng.below(7);
      bool clear = true;
      for (std::size_t i = start - 5; i < start + len + 5; ++i) clear = clear && dip[i] == 0.0;
      if (!clear) continue;
      for (std::size_t i = start; i < start + len; ++i) trace.values[i] = static_cast<std::uint8_t>(trace.values[i] - 1);
    }
  }
  for (const auto& a : profile.artifact_plan) {
    const auto i = static_cast<std::size_t>(std::lround(a.t));
    if (i < n) trace.values[i] = a.value;
  }
  return trace;
}

}  // namespace rosa::synth
