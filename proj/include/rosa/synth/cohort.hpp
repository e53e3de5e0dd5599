#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rosa/core/rng.hpp"
#include "rosa/synth/profile.hpp"

namespace rosa::synth {

enum class Severity { Normal, Mild, Moderate, Severe };

/// Knobs for randomly drawn overnight subjects.
struct CohortOptions {
  std::size_t subjects = 12;
  double duration = 8 * 3600.0;
  std::uint64_t seed = 2024;
  RadarConfig radar = RadarConfig::overnight();
  double snr_db = 20.0;
  double min_gap = 20.0;             // s between consecutive events
  double ca_uncoupled = 0.5;         // chance a central apnea leaves SpO2 flat
  double other_uncoupled = 0.08;
  std::size_t artifact_bursts = 3;
  double sleep_movement_rate = 0.02;
};

/// Stage sequence with ~90 min NREM/REM cycles: deep sleep early, longer REM late,
/// sleep-onset latency and a few brief awakenings.
inline Hypnogram generate_hypnogram(double duration, Rng& rng, double epoch_len = 30.0) {
  const auto E = static_cast<std::size_t>(std::ceil(duration / epoch_len - 1e-9));
  Hypnogram h{epoch_len, {}};
  h.stages.reserve(E);
  auto push = [&](Stage s, double minutes) {
    const auto n = static_cast<std::size_t>(std::max(1.0, std::round(minutes * 60.0 / epoch_len)));
    for (std::size_t i = 0; i < n && h.stages.size() < E; ++i) h.stages.push_back(s);
  };
  push(Stage::W, rng.uniform(5, 20));
  for (int cycle = 0; h.stages.size() < E; ++cycle) {
    const double depth = std::max(0.0, 1.0 - 0.3 * cycle);
    push(Stage::N1, rng.uniform(2, 6));
    push(Stage::N2, rng.uniform(15, 25));
    if (depth > 0.05) push(Stage::N3, 35 * depth * rng.uniform(0.7, 1.2));
    push(Stage::N2, rng.uniform(8, 20));
    push(Stage::R, std::min(35.0, 8.0 + 7.0 * cycle) * rng.uniform(0.8, 1.2));
    if (rng.bernoulli(0.6)) push(Stage::W, rng.uniform(1, 4));
  }
  // Morning awakening.
  const auto tail = static_cast<std::size_t>(rng.uniform(2, 10) * 60.0 / epoch_len);
  for (std::size_t i = E > tail ? E - tail : 0; i < E; ++i) h.stages[i] = Stage::W;
  return h;
}

inline double sleep_hours(const Hypnogram& h) {
  const auto n = std::count_if(h.stages.begin(), h.stages.end(), [](Stage s) { return s != Stage::W; });
  return static_cast<double>(n) * h.epoch_len / 3600.0;
}

inline double draw_target_ahi(Severity s, Rng& rng) {
  switch (s) {
    case Severity::Normal: return rng.uniform(1, 4);
    case Severity::Mild: return rng.uniform(6, 14);
    case Severity::Moderate: return rng.uniform(17, 28);
    case Severity::Severe: return rng.uniform(33, 45);
  }
  return 0.0;
}

/// Places `count` events fully inside sleep epochs with at least `min_gap`
/// seconds between them. Stops early if the night is saturated.
inline std::vector<PlannedEvent> plan_events(const Hypnogram& h, std::size_t count, double min_gap, Rng& rng) {
  std::vector<PlannedEvent> out;
  auto asleep = [&](double a, double b) {
    for (double t = a; t < b; t += h.epoch_len * 0.5)
      if (h.at(t) == Stage::W) return false;
    return h.at(b) != Stage::W;
  };
  const double total = h.duration();
  for (std::size_t tries = 0; out.size() < count && tries < 400 * (count + 1); ++tries) {
    const double u = rng.uniform();
    const EventKind kind = u < 0.12 ? EventKind::CA : u < 0.58 ? EventKind::OA : u < 0.70 ? EventKind::MA : EventKind::HP;
    double dur = 0;
    switch (kind) {
      case EventKind::CA: dur = rng.uniform(10, 30); break;
      case EventKind::OA: dur = rng.uniform(12, 45); break;
      case EventKind::MA: dur = rng.uniform(16, 45); break;
      case EventKind::HP: dur = rng.uniform(12, 50); break;
    }
    dur = std::round(dur);
    const double start = std::round(rng.uniform(0, total - dur - 1));
    if (!asleep(start, start + dur)) continue;
    bool clash = false;
    for (const auto& e : out) clash = clash || (start < e.end() + min_gap && e.start < start + dur + min_gap);
    if (clash) continue;
    out.push_back({kind, start, dur});
  }
  std::sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.start < b.start; });
  return out;
}

inline SubjectProfile make_overnight_profile(const CohortOptions& opt, std::size_t index, Severity severity) {
  Rng rng(Rng::mix(opt.seed, 1000 + index));
  SubjectProfile p;
  p.id = "subject_" + std::string(index < 10 ? "0" : "") + std::to_string(index);
  p.seed = Rng::mix(opt.seed, index);
  p.duration = opt.duration;
  p.radar = opt.radar;
  p.bed_range = rng.uniform(0.7, 1.1);
  p.breathing_rate = rng.uniform(0.2, 0.3);
  p.breathing_amplitude = rng.uniform(1.6e-3, 2.6e-3);
  p.render.snr_db = opt.snr_db;
  p.stage_dynamics = true;
  p.sleep_movement_rate = opt.sleep_movement_rate;
  p.spo2_baseline = 95 + static_cast<int>(rng.below(4));
  p.spo2_fluctuations = true;
  p.stage_plan = generate_hypnogram(opt.duration, rng);

  const double ahi = draw_target_ahi(severity, rng);
  const auto count = static_cast<std::size_t>(std::lround(ahi * sleep_hours(p.stage_plan)));
  p.event_plan = plan_events(p.stage_plan, count, opt.min_gap, rng);
  for (const auto& e : p.event_plan) {
    const double skip = e.kind == EventKind::CA ? opt.ca_uncoupled : opt.other_uncoupled;
    OdCoupling c;
    c.depth = rng.bernoulli(skip) ? 0 : (e.kind == EventKind::HP ? 3 + static_cast<int>(rng.below(3))
                                                                   : 3 + static_cast<int>(rng.below(6)));
    c.delay = rng.uniform(10, 30);
    p.od_coupling.push_back(c);
  }
  for (std::size_t a = 0; a < opt.artifact_bursts; ++a) {
    const double t0 = std::floor(rng.uniform(0, opt.duration - 10));
    const std::uint8_t v = rng.bernoulli(0.5) ? 0 : 255;
    const auto len = 1 + rng.below(5);
    for (std::size_t k = 0; k < len; ++k) p.artifact_plan.push_back({t0 + static_cast<double>(k), v});
  }
  return p;
}

/// Severities cycle Normal, Mild, Moderate, Severe so every fold sees a mix.
inline std::vector<SubjectProfile> make_cohort_profiles(const CohortOptions& opt) {
  std::vector<SubjectProfile> out;
  for (std::size_t i = 0; i < opt.subjects; ++i) out.push_back(make_overnight_profile(opt, i, static_cast<Severity>(i % 4)));
  return out;
}

}  // namespace rosa::synth
