#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rosa/core/error.hpp"
#include "rosa/core/labels.hpp"
#include "rosa/synth/radar_config.hpp"
#include "rosa/synth/render.hpp"

namespace rosa::synth {

inline constexpr double kMinEventDuration = 10.0;

struct PlannedEvent {
  EventKind kind = EventKind::OA;
  double start = 0.0;
  double duration = 0.0;

  double end() const { return start + duration; }
};

/// Desaturation that follows an event; depth 0 means the event leaves SpO2 untouched.
struct OdCoupling {
  int depth = 4;        // percent points
  double delay = 15.0;  // s from event end to desaturation onset
};

struct SpO2Artifact {
  double t = 0.0;
  std::uint8_t value = 255;
};

struct SubjectProfile {
  std::string id = "subject";
  std::uint64_t seed = 0;
  double duration = 600.0;
  double bed_range = 0.8;             // R0, m
  double breathing_rate = 0.25;       // Hz
  double breathing_amplitude = 2e-3;  // m
  std::vector<PlannedEvent> event_plan;
  Hypnogram stage_plan;               // empty: every epoch N2
  std::vector<OdCoupling> od_coupling;  // empty, or one per planned event (in plan order)
  std::vector<SpO2Artifact> artifact_plan;

  RadarConfig radar;
  RenderOptions render;
  bool stage_dynamics = false;  // stage-dependent rate/amplitude and wake movement
  double sleep_movement_rate = 0.0;  // movement bursts per sleep epoch
  int spo2_baseline = 97;
  int spo2_jitter = 0;
  bool spo2_fluctuations = false;

  std::size_t epochs() const {
    const double e = stage_plan.epoch_len > 0 ? stage_plan.epoch_len : 30.0;
    return static_cast<std::size_t>(std::ceil(duration / e - 1e-9));
  }

  void validate() const {
    radar.validate();
    const double epoch = stage_plan.epoch_len;
    if (!(epoch > 0)) throw InvalidArgument("profile " + id + ": epoch length must be positive");
    if (!(duration >= epoch)) {
      throw InvalidArgument("profile " + id + ": duration " + std::to_string(duration) + " s shorter than one epoch");
    }
    if (!(breathing_amplitude > 0 && breathing_amplitude <= 0.05)) {
      throw InvalidArgument("profile " + id + ": breathing amplitude must be in (0, 0.05] m");
    }
    if (!(breathing_rate >= 0.1 && breathing_rate <= 5.0)) {
      throw InvalidArgument("profile " + id + ": breathing rate must be in [0.1, 5] Hz");
    }
    if (!stage_plan.stages.empty() && stage_plan.size() != epochs()) {
      throw InvalidArgument("profile " + id + ": stage plan has " + std::to_string(stage_plan.size()) +
                            " epochs, duration needs " + std::to_string(epochs()));
    }
    if (!od_coupling.empty() && od_coupling.size() != event_plan.size()) {
      throw InvalidArgument("profile " + id + ": od_coupling must be empty or match the event plan");
    }
    std::vector<PlannedEvent> sorted = event_plan;
    std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.start < b.start; });
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const auto& e = sorted[i];
      if (e.duration < kMinEventDuration) {
        throw InvalidArgument("profile " + id + ": " + std::string(to_string(e.kind)) + " at " +
                              std::to_string(e.start) + " s lasts " + std::to_string(e.duration) + " s < 10 s");
      }
      if (e.start < 0 || e.end() > duration) {
        throw InvalidArgument("profile " + id + ": event at " + std::to_string(e.start) + " s outside recording");
      }
      if (i > 0 && sorted[i - 1].end() > e.start) {
        throw InvalidArgument("profile " + id + ": events overlap: [" + std::to_string(sorted[i - 1].start) + ", " +
                              std::to_string(sorted[i - 1].end()) + "] and [" + std::to_string(e.start) + ", " +
                              std::to_string(e.end()) + "]");
      }
    }
    for (const auto& c : od_coupling) {
      if (c.depth < 0 || c.depth > 50 || c.delay < 0) throw InvalidArgument("profile " + id + ": bad od_coupling");
    }
    if (spo2_baseline < 50 || spo2_baseline > 100) throw InvalidArgument("profile " + id + ": bad SpO2 baseline");
  }

  Hypnogram effective_hypnogram() const {
    if (!stage_plan.stages.empty()) return stage_plan;
    return Hypnogram{stage_plan.epoch_len, std::vector<Stage>(epochs(), Stage::N2)};
  }
};

}  // namespace rosa::synth
