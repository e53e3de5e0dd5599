#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "rosa/core/labels.hpp"
#include "rosa/core/rng.hpp"
#include "rosa/synth/profile.hpp"
#include "rosa/synth/render.hpp"
#include "rosa/synth/spo2.hpp"

namespace rosa::synth {

struct SubjectRecord {
  std::string id;
  RadarConfig config;
  double bed_range = 0.0;
  double duration = 0.0;
  BeatSignalCube beat;
  SpO2Trace spo2;
  std::vector<AnnotatedEvent> truth_events;
  Hypnogram truth_hypnogram;
  // Diagnostics only; not part of the saved container.
  std::vector<double> displacement;
  std::vector<double> movement;
};

struct MotionSeries {
  std::vector<double> breathing;  // chest displacement, m
  std::vector<double> movement;   // body-movement displacement, m
};

namespace detail {

struct StageDynamics {
  double rate = 1.0;
  double amplitude = 1.0;
  double irregularity = 0.0;  // spread of per-epoch random factors
  double movement = 0.0;      // burst probability per epoch
};

inline StageDynamics stage_dynamics(Stage s) {
  switch (s) {
    case Stage::W: return {1.3, 1.0, 0.25, 0.7};
    case Stage::N1: return {1.1, 0.9, 0.10, 0.10};
    case Stage::N2: return {1.0, 1.0, 0.05, 0.02};
    case Stage::N3: return {0.9, 1.15, 0.02, 0.01};
    case Stage::R: return {1.15, 0.8, 0.15, 0.03};
  }
  return {};
}

/// Piecewise-linear interpolation of per-epoch values at epoch centres.
inline double epoch_interp(const std::vector<double>& v, double epoch_len, double t) {
  const double x = t / epoch_len - 0.5;
  if (x <= 0) return v.front();
  const auto i = static_cast<std::size_t>(x);
  if (i + 1 >= v.size()) return v.back();
  const double w = x - static_cast<double>(i);
  return v[i] * (1 - w) + v[i + 1] * w;
}

/// Amplitude factor and extra phase for one planned event.
struct EventEnvelope {
  PlannedEvent plan;
  double obstructive_level = 0.3;
  double hypopnea_level = 0.5;
  std::array<double, 3> jitter_freq{};
  std::array<double, 3> jitter_phase{};
};

inline constexpr double kCentralLevel = 0.05;
inline constexpr double kRamp = 2.0;

inline double event_level(const EventEnvelope& e, double t) {
  const double u = t - e.plan.start;
  switch (e.plan.kind) {
    case EventKind::CA: return kCentralLevel;
    case EventKind::OA: return e.obstructive_level;
    case EventKind::HP: return e.hypopnea_level;
    case EventKind::MA: return u < 0.5 * e.plan.duration ? kCentralLevel : e.obstructive_level;
  }
  return 1.0;
}

}  // namespace detail

/// Breathing and movement displacement sampled at the radar frame rate.
inline MotionSeries simulate_motion(const SubjectProfile& p) {
  const double F = p.radar.F;
  const auto N = static_cast<std::size_t>(std::floor(F * p.duration));
  const Hypnogram hyp = p.effective_hypnogram();
  Rng rng(Rng::mix(p.seed, 0xB4EA));

  std::vector<double> rate_f(hyp.size(), 1.0), amp_f(hyp.size(), 1.0);
  if (p.stage_dynamics) {
    for (std::size_t e = 0; e < hyp.size(); ++e) {
      const auto dyn = detail::stage_dynamics(hyp.stages[e]);
      rate_f[e] = dyn.rate * (1.0 + dyn.irregularity * rng.uniform(-1, 1));
      amp_f[e] = dyn.amplitude * (1.0 + dyn.irregularity * rng.uniform(-1, 1));
    }
  }

  std::vector<PlannedEvent> events = p.event_plan;
  std::sort(events.begin(), events.end(), [](auto& a, auto& b) { return a.start < b.start; });
  std::vector<detail::EventEnvelope> env;
  for (const auto& e : events) {
    detail::EventEnvelope x{e, rng.uniform(0.2, 0.4), rng.uniform(0.3, 0.7), {}, {}};
    for (std::size_t k = 0; k < 3; ++k) {
      x.jitter_freq[k] = rng.uniform(0.05, 0.25);
      x.jitter_phase[k] = rng.uniform(0, 2 * std::numbers::pi);
    }
    env.push_back(x);
  }

  MotionSeries out;
  out.breathing.resize(N);
  out.movement.assign(N, 0.0);
  const double phase0 = rng.uniform(0, 2 * std::numbers::pi);
  double phase = phase0;
  std::size_t next_event = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double t = static_cast<double>(i) / F;
    double level = 1.0, extra_phase = 0.0;
    while (next_event < env.size() && env[next_event].plan.end() + 10.0 < t) ++next_event;
    for (std::size_t k = next_event; k < env.size() && env[k].plan.start <= t + 10.0; ++k) {
      const auto& e = env[k];
      const double u = t - e.plan.start, left = e.plan.end() - t;
      if (u >= 0 && left >= 0) {
        const double target = detail::event_level(e, t);
        // Linear ramps inside the event boundaries.
        const double w = std::min({1.0, u / detail::kRamp, left / detail::kRamp});
        level = 1.0 + (target - 1.0) * w;
        const bool obstructive =
            e.plan.kind == EventKind::OA || (e.plan.kind == EventKind::MA && u >= 0.5 * e.plan.duration);
        if (obstructive) {
          for (std::size_t q = 0; q < 3; ++q)
            extra_phase += w * 0.8 * std::sin(2 * std::numbers::pi * e.jitter_freq[q] * u + e.jitter_phase[q]);
        }
      } else if (left < 0 && -left < 8.0) {
        // recovery breaths right after the event
        level = 1.0 + 0.4 * (1.0 + left / 8.0);
      }
    }
    double amp = p.breathing_amplitude * level;
    double rate = p.breathing_rate;
    if (p.stage_dynamics) {
      amp *= detail::epoch_interp(amp_f, hyp.epoch_len, t);
      rate *= detail::epoch_interp(rate_f, hyp.epoch_len, t);
    }
    out.breathing[i] = amp * std::sin(phase + extra_phase);
    phase += 2 * std::numbers::pi * rate / F;
  }

  // Movement bursts: sums of 5.5-9 Hz tones, kept below the frame-rate Nyquist.
  const double top = std::min(9.0, 0.45 * F);
  if (top > 5.5 && (p.stage_dynamics || p.sleep_movement_rate > 0)) {
    for (std::size_t e = 0; e < hyp.size(); ++e) {
      double prob = p.stage_dynamics ? detail::stage_dynamics(hyp.stages[e]).movement : 0.0;
      if (hyp.stages[e] != Stage::W) prob = std::max(prob, p.sleep_movement_rate);
      if (!rng.bernoulli(prob)) continue;
      const double len = rng.uniform(2.0, 10.0);
      const double start = e * hyp.epoch_len + rng.uniform(0.0, hyp.epoch_len - len);
      const double a = rng.uniform(0.3e-3, 1.0e-3);
      const double f1 = rng.uniform(5.5, top), f2 = rng.uniform(5.5, top);
      const auto i0 = static_cast<std::size_t>(start * F);
      const auto i1 = std::min(N, static_cast<std::size_t>((start + len) * F));
      for (std::size_t i = i0; i < i1; ++i) {
        const double u = (static_cast<double>(i) - i0) / F;
        const double taper = std::sin(std::numbers::pi * u / len);
        out.movement[i] += a * taper * (std::sin(2 * std::numbers::pi * f1 * u) + 0.5 * std::sin(2 * std::numbers::pi * f2 * u));
      }
    }
  }
  return out;
}

inline std::vector<AnnotatedEvent> truth_from_plan(const std::vector<PlannedEvent>& plan) {
  std::vector<AnnotatedEvent> ev;
  for (const auto& e : plan) ev.push_back({e.kind, e.start, e.end()});
  std::stable_sort(ev.begin(), ev.end(), [](auto& a, auto& b) { return a.t_start < b.t_start; });
  return ev;
}

inline SubjectRecord generate_subject(const SubjectProfile& profile) {
  profile.validate();
  SubjectRecord rec;
  rec.id = profile.id;
  rec.config = profile.radar;
  rec.bed_range = profile.bed_range;
  rec.duration = profile.duration;
  rec.truth_events = truth_from_plan(profile.event_plan);
  rec.truth_hypnogram = profile.effective_hypnogram();

  auto motion = simulate_motion(profile);
  auto opt = profile.render;
  opt.noise_seed = Rng::mix(profile.seed, 0x0015E);
  rec.beat = render_beat_signal(profile.radar, profile.bed_range, motion.breathing, motion.movement, opt);

  // od_coupling follows plan order; reorder to match the sorted truth list.
  SubjectProfile sorted = profile;
  if (!profile.od_coupling.empty()) {
    std::vector<std::size_t> idx(profile.event_plan.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](auto a, auto b) { return profile.event_plan[a].start < profile.event_plan[b].start; });
    for (std::size_t i = 0; i < idx.size(); ++i) sorted.od_coupling[i] = profile.od_coupling[idx[i]];
  }
  rec.spo2 = synthesize_spo2(sorted, rec.truth_events);
  rec.displacement = std::move(motion.breathing);
  rec.movement = std::move(motion.movement);
  return rec;
}

}  // namespace rosa::synth
