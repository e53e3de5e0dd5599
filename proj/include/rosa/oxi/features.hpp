#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rosa/core/labels.hpp"
#include "rosa/core/segments.hpp"

namespace rosa::oxi {

/// 1 Hz trace after artifact masking and short-excursion flattening. Invalid samples
/// keep their raw code in `values` and never enter feature math.
struct CleanTrace {
  double rate = 1.0;
  std::vector<int> values;
  std::vector<std::uint8_t> valid;
  bool all_invalid = false;

  std::size_t size() const { return values.size(); }
  double time(std::size_t i) const { return static_cast<double>(i) / rate; }
};

struct CleanOptions {
  double max_excursion = 10.0;  // s; excursions returning to their starting level sooner are flattened
  double stable_level = 10.0;   // s; a level held this long counts as baseline
};

namespace detail {

inline std::vector<std::size_t> valid_indices(const CleanTrace& t, std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> idx;
  for (std::size_t i = lo; i < hi && i < t.size(); ++i)
    if (t.valid[i]) idx.push_back(i);
  return idx;
}

}  // namespace detail

/// Masks 0/255 samples, then walks the valid samples. An excursion that leaves a level
/// and comes back to exactly that level in under `max_excursion` seconds is overwritten
/// with the level, provided the level is baseline (held `stable_level`, or the first
/// one) or the excursion runs against the direction the level was entered from. The
/// last condition keeps the brief bottom of a steady fall, which looks like a short
/// dip from the step above it.
inline CleanTrace clean_trace(const SpO2Trace& raw, const CleanOptions& opt = {}) {
  CleanTrace t;
  t.rate = raw.rate;
  t.values.assign(raw.values.begin(), raw.values.end());
  t.valid.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) t.valid[i] = raw.valid(i);
  const auto idx = detail::valid_indices(t, 0, t.size());
  t.all_invalid = idx.empty();
  auto sign = [](int x) { return (x > 0) - (x < 0); };
  std::size_t a = 0, run_start = 0;
  int entry = 0;  // direction the current level was reached from: +1 rising, -1 falling, 0 first level
  while (a + 1 < idx.size()) {
    const int level = t.values[idx[a]];
    const std::size_t b = a + 1;
    if (t.values[idx[b]] == level) {
      a = b;
      continue;
    }
    const double held = t.time(idx[a]) - t.time(idx[run_start]) + 1.0 / t.rate;
    const int dir = sign(t.values[idx[b]] - level);
    std::size_t back = b;
    while (back < idx.size() && t.values[idx[back]] != level && t.time(idx[back]) - t.time(idx[b]) < opt.max_excursion)
      ++back;
    const bool baseline = entry == 0 || held >= opt.stable_level || dir != entry;
    const bool returned = back < idx.size() && t.values[idx[back]] == level &&
                          t.time(idx[back]) - t.time(idx[b]) < opt.max_excursion;
    if (baseline && returned) {
      for (std::size_t k = b; k < back; ++k) t.values[idx[k]] = level;
      a = back;
    } else {
      a = run_start = b;
      entry = dir;
    }
  }
  return t;
}

/// One fall from a local maximum to the following local minimum, with the rise after it.
struct Desaturation {
  std::size_t onset = 0;  // sample index where the fall starts (last sample of the top plateau)
  std::size_t nadir = 0;  // first sample of the bottom plateau
  std::size_t nadir_end = 0;  // last sample of the bottom plateau
  std::size_t peak = 0;   // first sample of the next top, or the last sample searched
  int depth = 0;  // percent points
  int rise = 0;   // percent points
};

/// Desaturations among the valid samples in [lo, hi), in time order.
inline std::vector<Desaturation> find_desaturations(const CleanTrace& t, std::size_t lo, std::size_t hi) {
  const auto idx = detail::valid_indices(t, lo, hi);
  // Collapse equal neighbours into plateaus: value, first and last sample.
  struct Run {
    int v;
    std::size_t first, last;
  };
  std::vector<Run> runs;
  for (auto i : idx) {
    if (!runs.empty() && runs.back().v == t.values[i]) {
      runs.back().last = i;
    } else {
      runs.push_back({t.values[i], i, i});
    }
  }
  std::vector<Desaturation> out;
  std::size_t r = 0;
  while (r + 1 < runs.size()) {
    if (runs[r + 1].v >= runs[r].v) {
      ++r;
      continue;
    }
    std::size_t bottom = r + 1;
    while (bottom + 1 < runs.size() && runs[bottom + 1].v < runs[bottom].v) ++bottom;
    std::size_t top = bottom;
    while (top + 1 < runs.size() && runs[top + 1].v > runs[top].v) ++top;
    Desaturation d;
    d.onset = runs[r].last;
    d.nadir = runs[bottom].first;
    d.nadir_end = runs[bottom].last;
    d.peak = runs[top].first;
    d.depth = runs[r].v - runs[bottom].v;
    d.rise = runs[top].v - runs[bottom].v;
    out.push_back(d);
    r = top;
  }
  return out;
}

struct SpO2Features {
  double p_od = 0.0;  // desaturation depth, %
  double p_or = 0.0;  // following rise, %
  double v_od = 0.0;  // fall slope, %/s (<= 0)
  double v_or = 0.0;  // rise slope, %/s (>= 0)
  bool available = true;  // false when the window holds no valid sample
  bool truncated = false;  // window cut by the end of the trace to under 15 s

  std::array<double, 4> as_array() const { return {p_od, p_or, v_od, v_or}; }
};

struct FeatureOptions {
  double window = 60.0;        // s after the segment end
  int od_threshold = 3;        // %
  double min_window = 15.0;    // s; shorter truncated windows are flagged
};

inline SpO2Features features_of(const CleanTrace& t, const Desaturation& d) {
  SpO2Features f;
  f.p_od = d.depth;
  f.p_or = d.rise;
  const double fall = t.time(d.nadir) - t.time(d.onset);
  const double climb = t.time(d.peak) - t.time(d.nadir_end);
  f.v_od = fall > 0 ? -f.p_od / fall : 0.0;
  f.v_or = climb > 0 ? f.p_or / climb : 0.0;
  return f;
}

/// Features from the valid samples in (t_end, t_end + window]: the first desaturation
/// reaching the threshold, else the deepest one (earliest on ties), else zeros.
inline SpO2Features extract_features(const CleanTrace& t, double t_end, const FeatureOptions& opt = {}) {
  const auto lo = static_cast<std::size_t>(std::max(0.0, std::floor(t_end * t.rate) + 1));
  const auto hi_time = std::floor((t_end + opt.window) * t.rate) + 1;
  const auto hi = static_cast<std::size_t>(std::clamp(hi_time, 0.0, static_cast<double>(t.size())));
  SpO2Features f;
  const double covered = hi > lo ? static_cast<double>(hi - lo) / t.rate : 0.0;
  const bool truncated = covered < opt.min_window;
  bool any = false;
  for (std::size_t i = lo; i < hi && !any; ++i) any = t.valid[i];
  if (!any) {
    f.available = false;
    f.truncated = truncated;
    return f;
  }
  const auto ds = find_desaturations(t, lo, hi);
  const Desaturation* pick = nullptr;
  for (const auto& d : ds)
    if (d.depth >= opt.od_threshold) {
      pick = &d;
      break;
    }
  if (!pick)
    for (const auto& d : ds)
      if (!pick || d.depth > pick->depth) pick = &d;
  if (pick) f = features_of(t, *pick);
  f.truncated = truncated;
  return f;
}

inline SpO2Features extract_features(const CleanTrace& t, const DetectedSegment& seg, const FeatureOptions& opt = {}) {
  return extract_features(t, seg.t_end, opt);
}

/// Desaturations of at least `threshold` percent over the whole night, per hour of sleep.
inline double odi(const CleanTrace& t, double tst_h, int threshold = 3) {
  if (!(tst_h > 0)) throw InvalidArgument("odi: total sleep time must be positive");
  const auto ds = find_desaturations(t, 0, t.size());
  const auto n = std::count_if(ds.begin(), ds.end(), [&](const Desaturation& d) { return d.depth >= threshold; });
  return static_cast<double>(n) / tst_h;
}

}  // namespace rosa::oxi
