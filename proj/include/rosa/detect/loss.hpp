#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "rosa/ad/ops.hpp"
#include "rosa/core/rng.hpp"
#include "rosa/detect/model.hpp"

namespace rosa::detect {

/// Per-candidate assignment: label 1 positive, 0 negative, -1 ignored; `gt` is the
/// best-overlapping annotation (valid for positives).
struct Assignment {
  std::vector<int> label;
  std::vector<std::size_t> gt;
};

/// IoU >= pos -> positive, < neg -> negative, otherwise ignored. Each annotation
/// also claims its best-overlapping candidates (ties included) when that IoU is > 0.
template <typename Candidate>
Assignment assign(std::span<const Candidate> cands, std::span<const AnnotatedEvent> gts, double pos, double neg) {
  Assignment a;
  a.label.assign(cands.size(), 0);
  a.gt.assign(cands.size(), 0);
  if (gts.empty()) return a;
  std::vector<double> best(cands.size(), 0.0);
  std::vector<double> gt_best(gts.size(), 0.0);
  std::vector<double> ious(cands.size() * gts.size());
  for (std::size_t i = 0; i < cands.size(); ++i)
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = interval_iou(cands[i].t_start(), cands[i].t_end(), gts[g].t_start, gts[g].t_end);
      ious[i * gts.size() + g] = v;
      if (v > best[i]) {
        best[i] = v;
        a.gt[i] = g;
      }
      gt_best[g] = std::max(gt_best[g], v);
    }
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (best[i] >= pos) a.label[i] = 1;
    else if (best[i] >= neg) a.label[i] = -1;
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best[g] <= 0) continue;
    for (std::size_t i = 0; i < cands.size(); ++i)
      if (ious[i * gts.size() + g] == gt_best[g]) {
        a.label[i] = 1;
        a.gt[i] = g;
      }
  }
  return a;
}

/// Keeps at most batch * pos_fraction positives and fills the rest with negatives;
/// everything not drawn becomes ignored.
inline void subsample(std::vector<int>& label, std::size_t batch, double pos_fraction, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] == 1) pos.push_back(i);
    else if (label[i] == 0) neg.push_back(i);
  }
  auto keep_random = [&](std::vector<std::size_t>& idx, std::size_t n) {
    for (std::size_t i = 0; i < std::min(n, idx.size()); ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    for (std::size_t i = n; i < idx.size(); ++i) label[idx[i]] = -1;
  };
  const auto max_pos = static_cast<std::size_t>(std::floor(static_cast<double>(batch) * pos_fraction));
  keep_random(pos, max_pos);
  const std::size_t n_pos = std::min(pos.size(), max_pos);
  keep_random(neg, batch > n_pos ? batch - n_pos : 0);
}

struct Proposal {
  Soi soi;
  double t_start() const { return soi.t_start(); }
  double t_end() const { return soi.t_end(); }
};

/// Decoded, clipped, NMS-filtered SoIs from SPN outputs (values only, no graph).
inline std::vector<Soi> propose(const SpnOutput& spn, std::span<const Anchor> anchors, double time_len,
                                const DetectorConfig& cfg, std::size_t keep) {
  const std::size_t A = cfg.anchors_per_step();
  std::vector<Soi> all;
  all.reserve(anchors.size());
  std::size_t idx = 0;
  for (std::size_t k = 0; k < kLevels; ++k) {
    const std::size_t T = spn.objectness[k].dim(1);
    for (std::size_t j = 0; j < T; ++j)
      for (std::size_t a = 0; a < A; ++a, ++idx) {
        const std::size_t f = DetectorModel::spn_index(a, j, T);
        const double score = ad::detail::stable_sigmoid(spn.objectness[k][f]);
        const double tw = std::clamp(spn.deltas[k][f + A * T], -4.0, 4.0);
        Soi s = decode_soi(anchors[idx], spn.deltas[k][f], tw, score, idx);
        const double lo = std::max(0.0, s.t_start()), hi = std::min(time_len, s.t_end());
        if (!(hi - lo >= 1.0)) continue;
        s.center = 0.5 * (lo + hi);
        s.width = hi - lo;
        all.push_back(s);
      }
  }
  std::stable_sort(all.begin(), all.end(), [](const Soi& a, const Soi& b) { return a.score > b.score; });
  if (all.size() > cfg.pre_nms_top) all.resize(cfg.pre_nms_top);
  std::vector<Soi> out;
  for (std::size_t i : nms_proposals(all, cfg.proposal_nms, keep)) out.push_back(all[i]);
  return out;
}

/// Everything the loss needs that is not differentiated: sampled anchor labels
/// and offsets, the RoIs fed to the head, their classes and offsets.
struct DetectionTargets {
  std::vector<Anchor> anchors;
  std::vector<int> anchor_label;
  std::vector<Offsets> anchor_offsets;
  std::vector<Soi> rois;
  std::vector<std::size_t> roi_class;  // 0 = Normal
  std::vector<Offsets> roi_offsets;     // valid where roi_class > 0
};

/// `gts` in crop-local seconds. Proposals come from `spn` values; annotations are
/// added as RoIs so the head always sees positives.
inline DetectionTargets make_targets(const DetectorModel& model, const Pyramid& pyr, const SpnOutput& spn,
                                     std::span<const AnnotatedEvent> gts, double time_len, Rng& rng) {
  const auto& cfg = model.config();
  DetectionTargets t;
  t.anchors = model.anchors(pyr);
  auto am = assign<Anchor>(t.anchors, gts, cfg.pos_iou, cfg.neg_iou);
  subsample(am.label, cfg.spn_batch, cfg.spn_pos_fraction, rng);
  t.anchor_label = am.label;
  t.anchor_offsets.resize(t.anchors.size());
  for (std::size_t i = 0; i < t.anchors.size(); ++i)
    if (am.label[i] == 1) t.anchor_offsets[i] = encode_offsets(t.anchors[i], gts[am.gt[i]].t_start, gts[am.gt[i]].t_end);

  std::vector<Soi> cands = propose(spn, t.anchors, time_len, cfg, cfg.post_nms_train);
  for (const auto& g : gts) cands.push_back({1.0, g.midpoint(), g.duration(), 0});
  std::vector<Proposal> wrapped;
  for (const auto& s : cands) wrapped.push_back({s});
  auto rm = assign<Proposal>(wrapped, gts, cfg.pos_iou, cfg.neg_iou);
  subsample(rm.label, cfg.roi_batch, cfg.roi_pos_fraction, rng);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (rm.label[i] < 0) continue;
    t.rois.push_back(cands[i]);
    if (rm.label[i] == 1) {
      const auto& g = gts[rm.gt[i]];
      t.roi_class.push_back(class_of_kind(g.kind));
      t.roi_offsets.push_back(encode_offsets(cands[i].center, cands[i].width, g.t_start, g.t_end));
    } else {
      t.roi_class.push_back(0);
      t.roi_offsets.push_back({});
    }
  }
  return t;
}

inline std::vector<Interval> intervals_of(std::span<const Soi> sois) {
  std::vector<Interval> v;
  v.reserve(sois.size());
  for (const auto& s : sois) v.push_back({s.t_start(), s.t_end()});
  return v;
}

struct DetectionLoss {
  ad::Tensor total;
  double spn_cls = 0, spn_reg = 0, head_cls = 0, head_reg = 0;
};

/// Objectness BCE over sampled anchors plus smooth-L1 on positive anchor offsets
/// (summed, divided by the positive count); the head adds class-weighted 5-way
/// cross-entropy over sampled RoIs and smooth-L1 on the true class's offsets.
inline DetectionLoss detection_loss(const SpnOutput& spn, const HeadTensors& head, const DetectionTargets& t,
                                    std::size_t anchors_per_step, const std::vector<double>& class_weights = {}) {
  const std::size_t A = anchors_per_step;
  std::vector<ad::Tensor> logits, deltas;
  std::vector<double> obj_target, reg_target;
  std::size_t n_pos = 0;
  std::size_t base = 0;
  for (std::size_t k = 0; k < kLevels; ++k) {
    const std::size_t T = spn.objectness[k].dim(1);
    std::vector<std::size_t> cls_idx, reg_idx;
    for (std::size_t j = 0; j < T; ++j)
      for (std::size_t a = 0; a < A; ++a) {
        const std::size_t i = base + j * A + a;
        if (t.anchor_label[i] < 0) continue;
        const std::size_t f = DetectorModel::spn_index(a, j, T);
        cls_idx.push_back(f);
        obj_target.push_back(t.anchor_label[i] == 1 ? 1.0 : 0.0);
        if (t.anchor_label[i] == 1) {
          reg_idx.push_back(f);
          reg_idx.push_back(f + A * T);
          reg_target.push_back(t.anchor_offsets[i].tx);
          reg_target.push_back(t.anchor_offsets[i].tw);
          ++n_pos;
        }
      }
    if (!cls_idx.empty()) logits.push_back(ad::take(spn.objectness[k], cls_idx));
    if (!reg_idx.empty()) deltas.push_back(ad::take(spn.deltas[k], reg_idx));
    base += T * A;
  }
  if (base != t.anchor_label.size()) throw ShapeError("detection_loss: anchor count differs from SPN output");

  DetectionLoss out;
  ad::Tensor total = ad::Tensor::scalar(0.0);
  if (!logits.empty()) {
    auto l = ad::bce_with_logits(logits.size() == 1 ? logits[0] : ad::concat(logits, 0), obj_target);
    out.spn_cls = l.item();
    total = ad::add(total, l);
  }
  if (!deltas.empty()) {
    auto l = ad::scale(ad::smooth_l1(deltas.size() == 1 ? deltas[0] : ad::concat(deltas, 0), reg_target),
                       1.0 / static_cast<double>(n_pos));
    out.spn_reg = l.item();
    total = ad::add(total, l);
  }
  if (!t.rois.empty()) {
    auto l = ad::cross_entropy(head.logits, t.roi_class, class_weights);
    out.head_cls = l.item();
    total = ad::add(total, l);
    std::vector<std::size_t> idx;
    std::vector<double> target;
    for (std::size_t r = 0; r < t.rois.size(); ++r) {
      const std::size_t c = t.roi_class[r];
      if (c == 0) continue;
      idx.push_back(r * 2 * kHeadClasses + c);
      idx.push_back(r * 2 * kHeadClasses + kHeadClasses + c);
      target.push_back(t.roi_offsets[r].tx);
      target.push_back(t.roi_offsets[r].tw);
    }
    if (!idx.empty()) {
      auto lr = ad::scale(ad::smooth_l1(ad::take(head.deltas, idx), target), 2.0 / static_cast<double>(idx.size()));
      out.head_reg = lr.item();
      total = ad::add(total, lr);
    }
  }
  out.total = total;
  return out;
}

/// Forward pass and loss on one crop with fixed targets.
inline DetectionLoss crop_loss(const DetectorModel& model, const ad::Tensor& x, double frame_hop,
                               const DetectionTargets& t, const std::vector<double>& class_weights) {
  const Pyramid pyr = model.features(x, frame_hop);
  const SpnOutput spn = model.spn(pyr);
  HeadTensors head;
  if (!t.rois.empty()) head = model.head(pyr, intervals_of(t.rois));
  return detection_loss(spn, head, t, model.config().anchors_per_step(), class_weights);
}

}  // namespace rosa::detect
