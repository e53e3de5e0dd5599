#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "rosa/core/segments.hpp"

namespace rosa::metrics {

enum class MatchMode { SameClass, ClassAgnostic };

/// Detections and annotations of one recording; matching never crosses recordings.
struct EvalSet {
  std::vector<DetectedSegment> dets;
  std::vector<AnnotatedEvent> truths;
};

struct PrCurve {
  std::vector<double> precision;  // after each ranked detection
  std::vector<double> recall;
  std::vector<bool> true_positive;
  std::size_t truths = 0;
};

/// Ranks all detections by descending score (ties keep input order) and
/// greedily matches each to the unmatched truth of its recording with the
/// highest IoU >= thr (ties go to the earlier truth).
inline PrCurve precision_recall(std::span<const EvalSet> sets, double iou_thr = 0.5,
                                MatchMode mode = MatchMode::SameClass) {
  struct Ref {
    std::size_t set, det;
  };
  std::vector<Ref> order;
  std::vector<std::vector<bool>> used;
  PrCurve pr;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (std::size_t d = 0; d < sets[s].dets.size(); ++d) order.push_back({s, d});
    used.emplace_back(sets[s].truths.size(), false);
    pr.truths += sets[s].truths.size();
  }
  std::stable_sort(order.begin(), order.end(), [&](const Ref& a, const Ref& b) {
    return sets[a.set].dets[a.det].score > sets[b.set].dets[b.det].score;
  });
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& d = sets[order[rank].set].dets[order[rank].det];
    const auto& truths = sets[order[rank].set].truths;
    auto& taken = used[order[rank].set];
    double best = 0.0;
    std::optional<std::size_t> hit;
    for (std::size_t j = 0; j < truths.size(); ++j) {
      if (taken[j] || (mode == MatchMode::SameClass && truths[j].kind != d.kind)) continue;
      const double v = iou(d, truths[j]);
      if (v >= iou_thr && (!hit || v > best)) {
        best = v;
        hit = j;
      }
    }
    if (hit) {
      taken[*hit] = true;
      ++tp;
    }
    pr.true_positive.push_back(hit.has_value());
    pr.precision.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
    pr.recall.push_back(pr.truths ? static_cast<double>(tp) / static_cast<double>(pr.truths) : 0.0);
  }
  return pr;
}

/// All-points interpolated AP: sum over recall steps of the precision envelope.
inline double area_under_envelope(const PrCurve& pr) {
  std::vector<double> env = pr.precision;
  for (std::size_t i = env.size(); i-- > 1;) env[i - 1] = std::max(env[i - 1], env[i]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < env.size(); ++i) {
    ap += (pr.recall[i] - prev_recall) * env[i];
    prev_recall = pr.recall[i];
  }
  return ap;
}

/// AP at the IoU threshold; nullopt when there is nothing to recall.
inline std::optional<double> average_precision(std::span<const EvalSet> sets, double iou_thr = 0.5,
                                               MatchMode mode = MatchMode::SameClass) {
  const auto pr = precision_recall(sets, iou_thr, mode);
  if (pr.truths == 0) return std::nullopt;
  return area_under_envelope(pr);
}

inline std::optional<double> average_precision(const std::vector<DetectedSegment>& dets,
                                               const std::vector<AnnotatedEvent>& truths, double iou_thr = 0.5,
                                               MatchMode mode = MatchMode::SameClass) {
  const EvalSet one{dets, truths};
  return average_precision(std::span<const EvalSet>(&one, 1), iou_thr, mode);
}

/// AP restricted to one event class on both sides.
inline std::optional<double> class_average_precision(std::span<const EvalSet> sets, EventKind kind,
                                                     double iou_thr = 0.5) {
  std::vector<EvalSet> only(sets.size());
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (const auto& x : sets[s].dets)
      if (x.kind == kind) only[s].dets.push_back(x);
    for (const auto& x : sets[s].truths)
      if (x.kind == kind) only[s].truths.push_back(x);
  }
  return average_precision(only, iou_thr, MatchMode::SameClass);
}

/// Overall AP pools every class and matches irrespective of the predicted type.
inline std::optional<double> overall_average_precision(std::span<const EvalSet> sets, double iou_thr = 0.5) {
  return average_precision(sets, iou_thr, MatchMode::ClassAgnostic);
}

}  // namespace rosa::metrics
