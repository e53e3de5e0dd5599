#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "rosa/detect/loss.hpp"

namespace rosa::detect {

/// Detections on one crop, in crop-local seconds, after per-class NMS.
inline std::vector<DetectedSegment> detect_crop(const DetectorModel& model, const ad::Tensor& x, double frame_hop,
                                                DecodeStats* stats = nullptr) {
  ad::NoGradGuard no_grad;
  const auto& cfg = model.config();
  const double len = static_cast<double>(x.dim(2)) * frame_hop;
  const Pyramid pyr = model.features(x, frame_hop);
  const SpnOutput spn = model.spn(pyr);
  const auto anchors = model.anchors(pyr);
  const auto sois = propose(spn, anchors, len, cfg, cfg.post_nms_test);
  if (sois.empty()) return {};
  const HeadTensors head = model.head(pyr, intervals_of(sois));
  const auto prob = ad::softmax(head.logits);
  std::vector<DetectedSegment> segs;
  for (std::size_t r = 0; r < sois.size(); ++r) {
    HeadOutput h;
    for (std::size_t c = 0; c < kHeadClasses; ++c) {
      h.prob[c] = prob[r * kHeadClasses + c];
      h.tx[c] = head.deltas[r * 2 * kHeadClasses + c];
      h.tw[c] = std::clamp(head.deltas[r * 2 * kHeadClasses + kHeadClasses + c], -4.0, 4.0);
    }
    if (auto s = decode_segment(sois[r], h, stats)) segs.push_back(*s);
  }
  return nms_1d(segs, cfg.nms);
}

struct Chunk {
  std::size_t first = 0;  // frame
  std::size_t count = 0;  // frames
  double own_lo = 0.0;    // s; detections centred in [own_lo, own_hi) are kept
  double own_hi = 0.0;
};

/// Fixed-length chunks with the configured overlap; the last chunk is aligned to
/// the end of the night. Ownership boundaries sit at overlap midpoints.
inline std::vector<Chunk> plan_chunks(std::size_t frames, double frame_hop, double chunk_len, double overlap) {
  const auto L = static_cast<std::size_t>(std::llround(chunk_len / frame_hop));
  const auto O = static_cast<std::size_t>(std::llround(overlap / frame_hop));
  std::vector<Chunk> out;
  if (frames == 0 || L == 0) return out;
  if (frames <= L) {
    out.push_back({0, frames, 0, 0});
  } else {
    const std::size_t step = L > O ? L - O : L;
    std::size_t first = 0;
    while (first + L < frames) {
      out.push_back({first, L, 0, 0});
      first += step;
    }
    if (out.back().first + L < frames) out.push_back({frames - L, L, 0, 0});
  }
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].own_lo = i == 0 ? -inf : 0.5 * (static_cast<double>(out[i].first) + static_cast<double>(out[i - 1].first + out[i - 1].count)) * frame_hop;
    if (i > 0) out[i - 1].own_hi = out[i].own_lo;
  }
  if (!out.empty()) out.back().own_hi = inf;
  return out;
}

/// Shifts each chunk's local detections to night time, keeps those centred in the
/// chunk's territory, and merges with per-class NMS. Output sorted by start time.
inline std::vector<DetectedSegment> merge_chunks(std::span<const Chunk> chunks,
                                                 const std::vector<std::vector<DetectedSegment>>& local,
                                                 double frame_hop, const NmsOptions& nms) {
  std::vector<DetectedSegment> all;
  for (std::size_t i = 0; i < chunks.size() && i < local.size(); ++i) {
    const double offset = static_cast<double>(chunks[i].first) * frame_hop;
    for (auto s : local[i]) {
      s.t_start += offset;
      s.t_end += offset;
      const double mid = s.midpoint();
      if (mid >= chunks[i].own_lo && mid < chunks[i].own_hi) all.push_back(s);
    }
  }
  auto merged = nms_1d(all, nms);
  std::stable_sort(merged.begin(), merged.end(),
                   [](const DetectedSegment& a, const DetectedSegment& b) { return a.t_start < b.t_start; });
  return merged;
}

struct DetectReport {
  std::size_t chunks = 0;
  std::size_t skipped_chunks = 0;  // shorter than the widest anchor
  DecodeStats decode;
};

/// Whole-night detection on a normalized stack; output sorted by start time.
inline std::vector<DetectedSegment> detect_events(const DetectorModel& model, const preproc::SpectrogramStack& stack,
                                                  DetectReport* report = nullptr) {
  const auto& cfg = model.config();
  const double hop = stack.frame_hop;
  const std::size_t min_frames = 2 * DetectorModel::level_frames(kLevels - 1);
  const auto chunks = plan_chunks(stack.frames, hop, cfg.chunk_len, cfg.chunk_overlap);
  std::vector<std::vector<DetectedSegment>> local(chunks.size());
  DetectReport rep;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto& ch = chunks[i];
    ++rep.chunks;
    if (static_cast<double>(ch.count) * hop < cfg.max_anchor_width() || ch.count < min_frames) {
      ++rep.skipped_chunks;
      continue;
    }
    local[i] = detect_crop(model, stack_tensor(stack, ch.first, ch.count), hop, &rep.decode);
  }
  if (report) *report = rep;
  return merge_chunks(chunks, local, hop, cfg.nms);
}

}  // namespace rosa::detect
