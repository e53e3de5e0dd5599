#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rosa/core/error.hpp"

namespace rosa {

enum class EventKind : std::uint8_t { CA = 0, OA = 1, MA = 2, HP = 3 };
inline constexpr std::array<EventKind, 4> kEventKinds{EventKind::CA, EventKind::OA, EventKind::MA, EventKind::HP};

inline std::string_view to_string(EventKind k) {
  constexpr std::array<std::string_view, 4> names{"CA", "OA", "MA", "HP"};
  return names[static_cast<std::size_t>(k)];
}

inline EventKind parse_event_kind(std::string_view s) {
  for (auto k : kEventKinds)
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown event kind '" + std::string(s) + "'");
}

inline bool is_apnea(EventKind k) { return k != EventKind::HP; }

struct AnnotatedEvent {
  EventKind kind = EventKind::OA;
  double t_start = 0.0;
  double t_end = 0.0;

  double duration() const { return t_end - t_start; }
  double midpoint() const { return 0.5 * (t_start + t_end); }
  bool operator==(const AnnotatedEvent&) const = default;
};

enum class Stage : std::uint8_t { W = 0, N1 = 1, N2 = 2, N3 = 3, R = 4 };
inline constexpr std::size_t kNumStages = 5;

inline std::string_view to_string(Stage s) {
  constexpr std::array<std::string_view, 5> names{"W", "N1", "N2", "N3", "R"};
  return names[static_cast<std::size_t>(s)];
}

inline Stage parse_stage(std::string_view s) {
  for (std::size_t i = 0; i < kNumStages; ++i)
    if (to_string(static_cast<Stage>(i)) == s) return static_cast<Stage>(i);
  throw InvalidArgument("unknown sleep stage '" + std::string(s) + "'");
}

struct Hypnogram {
  double epoch_len = 30.0;
  std::vector<Stage> stages;

  std::size_t size() const { return stages.size(); }
  double duration() const { return epoch_len * static_cast<double>(stages.size()); }
  /// Stage of the epoch containing time t (clamped to the last epoch).
  Stage at(double t) const {
    if (stages.empty()) throw InvalidArgument("Hypnogram::at: empty hypnogram");
    auto i = static_cast<std::size_t>(t < 0 ? 0.0 : t / epoch_len);
    return stages[std::min(i, stages.size() - 1)];
  }
  bool operator==(const Hypnogram&) const = default;
};

/// Oximeter samples at 1 Hz in integer percent; 0 and 255 are device artifact codes.
struct SpO2Trace {
  double rate = 1.0;
  std::vector<std::uint8_t> values;

  static constexpr bool valid_value(std::uint8_t v) { return v != 0 && v != 255; }
  bool valid(std::size_t i) const { return valid_value(values[i]); }
  std::size_t size() const { return values.size(); }
  bool operator==(const SpO2Trace&) const = default;
};

}  // namespace rosa
