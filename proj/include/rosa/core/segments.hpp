#pragma once

#include <algorithm>

#include "rosa/core/labels.hpp"

namespace rosa {

/// Temporal IoU of [s1, e1) and [s2, e2); 0 when the union is empty.
inline double interval_iou(double s1, double e1, double s2, double e2) {
  const double inter = std::max(0.0, std::min(e1, e2) - std::max(s1, s2));
  const double uni = (e1 - s1) + (e2 - s2) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

struct DetectedSegment {
  EventKind kind = EventKind::OA;
  double score = 0.0;  // p_r from radar, or the fused p_f
  double t_start = 0.0;
  double t_end = 0.0;

  double duration() const { return t_end - t_start; }
  double midpoint() const { return 0.5 * (t_start + t_end); }
  AnnotatedEvent as_event() const { return {kind, t_start, t_end}; }
  bool operator==(const DetectedSegment&) const = default;
};

template <typename A, typename B>
double iou(const A& a, const B& b) {
  return interval_iou(a.t_start, a.t_end, b.t_start, b.t_end);
}

}  // namespace rosa
