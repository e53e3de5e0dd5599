#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "rosa/core/error.hpp"
#include "rosa/core/segments.hpp"

namespace rosa::detect {

inline constexpr std::size_t kHeadClasses = 5;  // Normal, CA, OA, MA, HP

/// Head class index -> event kind; index 0 (Normal) has none.
inline std::optional<EventKind> kind_of_class(std::size_t c) {
  if (c == 0 || c >= kHeadClasses) return std::nullopt;
  return static_cast<EventKind>(c - 1);
}

inline std::size_t class_of_kind(EventKind k) { return static_cast<std::size_t>(k) + 1; }

struct Anchor {
  double center = 0.0;  // s
  double width = 0.0;   // s
  std::size_t level = 0;

  double t_start() const { return center - 0.5 * width; }
  double t_end() const { return center + 0.5 * width; }
};

/// Anchors for one level whose feature map has `steps` positions; step j is centred at (j + 0.5) * stride.
inline void append_level_anchors(std::vector<Anchor>& out, std::size_t level, std::size_t steps, double stride,
                                 std::span<const double> widths) {
  for (std::size_t j = 0; j < steps; ++j)
    for (double w : widths) out.push_back({(static_cast<double>(j) + 0.5) * stride, w, level});
}

/// Level-major, time-major, scale-minor. A level covers floor(time_len / stride) steps.
inline std::vector<Anchor> generate_anchors(double time_len, std::span<const double> level_strides,
                                            std::span<const std::vector<double>> scales_per_level) {
  if (level_strides.size() != scales_per_level.size()) {
    throw InvalidArgument("generate_anchors: one scale list per level required");
  }
  std::vector<Anchor> out;
  for (std::size_t k = 0; k < level_strides.size(); ++k) {
    if (!(level_strides[k] > 0)) throw InvalidArgument("generate_anchors: strides must be positive");
    for (double w : scales_per_level[k])
      if (!(w > 0)) throw InvalidArgument("generate_anchors: scales must be positive");
    const auto steps = static_cast<std::size_t>(std::floor(time_len / level_strides[k]));
    append_level_anchors(out, k, steps, level_strides[k], scales_per_level[k]);
  }
  return out;
}

struct Offsets {
  double tx = 0.0;
  double tw = 0.0;
};

inline Offsets encode_offsets(double anchor_center, double anchor_width, double gt_start, double gt_end) {
  const double gw = gt_end - gt_start;
  if (!(anchor_width > 0) || !(gw > 0)) throw InvalidArgument("encode_offsets: widths must be positive");
  return {(0.5 * (gt_start + gt_end) - anchor_center) / anchor_width, std::log(gw / anchor_width)};
}

inline Offsets encode_offsets(const Anchor& a, double gt_start, double gt_end) {
  return encode_offsets(a.center, a.width, gt_start, gt_end);
}

/// Segment of interest: a proposal with its objectness and decoded extent.
struct Soi {
  double score = 0.0;
  double center = 0.0;
  double width = 0.0;
  std::size_t anchor = 0;  // index into the anchor list it came from

  double t_start() const { return center - 0.5 * width; }
  double t_end() const { return center + 0.5 * width; }
};

inline Soi decode_soi(const Anchor& a, double tx, double tw, double score, std::size_t anchor_index = 0) {
  return {score, a.center + tx * a.width, a.width * std::exp(tw), anchor_index};
}

/// One SoI's head output: class probabilities and class-specific offsets.
struct HeadOutput {
  std::array<double, kHeadClasses> prob{};
  std::array<double, kHeadClasses> tx{};
  std::array<double, kHeadClasses> tw{};
};

struct DecodeStats {
  std::size_t normal = 0;
  std::size_t discarded = 0;  // t_end <= t_start or non-finite after decode
};

/// Argmax class (first index on ties), its probability as score, boundaries from the class offsets.
/// Normal-class SoIs yield nothing.
inline std::optional<DetectedSegment> decode_segment(const Soi& soi, const HeadOutput& head,
                                                     DecodeStats* stats = nullptr) {
  std::size_t c = 0;
  for (std::size_t i = 1; i < kHeadClasses; ++i)
    if (head.prob[i] > head.prob[c]) c = i;
  const auto kind = kind_of_class(c);
  if (!kind) {
    if (stats) ++stats->normal;
    return std::nullopt;
  }
  const double mid = soi.center + head.tx[c] * soi.width;
  const double half = 0.5 * soi.width * std::exp(head.tw[c]);
  DetectedSegment s{*kind, head.prob[c], mid - half, mid + half};
  if (!std::isfinite(s.t_start) || !std::isfinite(s.t_end) || !(s.t_end > s.t_start)) {
    if (stats) ++stats->discarded;
    return std::nullopt;
  }
  return s;
}

/// Rank order used by NMS: descending score, then earlier start, then input order.
inline std::vector<std::size_t> score_order(std::span<const DetectedSegment> segs) {
  std::vector<std::size_t> idx(segs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (segs[a].score != segs[b].score) return segs[a].score > segs[b].score;
    return segs[a].t_start < segs[b].t_start;
  });
  return idx;
}

struct NmsOptions {
  double iou_threshold = 0.5;
  double score_threshold = 0.05;
  bool class_agnostic = false;
};

/// Greedy NMS. Output is in rank order.
inline std::vector<DetectedSegment> nms_1d(std::span<const DetectedSegment> segs, NmsOptions opt = {}) {
  std::vector<DetectedSegment> kept;
  for (std::size_t i : score_order(segs)) {
    const auto& s = segs[i];
    if (s.score < opt.score_threshold) continue;
    bool suppressed = false;
    for (const auto& k : kept) {
      if ((opt.class_agnostic || k.kind == s.kind) && iou(k, s) >= opt.iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(s);
  }
  return kept;
}

inline std::vector<DetectedSegment> nms_1d(std::span<const DetectedSegment> segs, double iou_threshold,
                                           double score_threshold) {
  return nms_1d(segs, NmsOptions{iou_threshold, score_threshold, false});
}

/// Class-agnostic NMS over proposals; returns indices into `sois` in rank order, at most `keep`.
inline std::vector<std::size_t> nms_proposals(std::span<const Soi> sois, double iou_threshold, std::size_t keep) {
  std::vector<std::size_t> idx(sois.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sois[a].score > sois[b].score; });
  std::vector<std::size_t> kept;
  for (std::size_t i : idx) {
    if (kept.size() >= keep) break;
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (interval_iou(sois[k].t_start(), sois[k].t_end(), sois[i].t_start(), sois[i].t_end()) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

}  // namespace rosa::detect
