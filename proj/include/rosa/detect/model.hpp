#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosa/ad/init.hpp"
#include "rosa/ad/ops.hpp"
#include "rosa/core/rng.hpp"
#include "rosa/detect/roi_align.hpp"
#include "rosa/detect/segment_math.hpp"
#include "rosa/preproc/spectrogram.hpp"

namespace rosa::detect {

inline constexpr std::size_t kLevels = 3;

enum class RangeReduction { Mean, Max };

struct DetectorConfig {
  std::size_t in_channels = preproc::kChannels;
  std::size_t range_pool = 5;  // stem kernel and stride along range
  std::array<std::size_t, kLevels> widths{16, 32, 64};
  std::size_t fpn_width = 16;
  std::size_t head_hidden = 64;
  std::array<std::vector<double>, kLevels> anchor_widths{
      std::vector<double>{10, 15, 22}, std::vector<double>{30, 45, 65}, std::vector<double>{90, 130, 180}};
  RangeReduction reduction = RangeReduction::Mean;
  RoiAlignOptions roi{};

  // proposals
  std::size_t pre_nms_top = 300;
  double proposal_nms = 0.7;
  std::size_t post_nms_train = 48;
  std::size_t post_nms_test = 100;

  // matching and sampling
  double pos_iou = 0.5;
  double neg_iou = 0.3;
  std::size_t spn_batch = 64;
  double spn_pos_fraction = 0.5;
  std::size_t roi_batch = 32;
  double roi_pos_fraction = 0.25;

  // output
  NmsOptions nms{0.5, 0.05, false};
  double chunk_len = 600;     // s
  double chunk_overlap = 60;  // s

  std::size_t anchors_per_step() const { return anchor_widths[0].size(); }
  /// Level stride in frames.
  static std::size_t level_stride_frames(std::size_t k) { return std::size_t{4} << k; }
  double max_anchor_width() const {
    double m = 0;
    for (const auto& ws : anchor_widths)
      for (double w : ws) m = std::max(m, w);
    return m;
  }

  void validate() const {
    if (in_channels == 0 || range_pool == 0 || fpn_width == 0 || head_hidden == 0) {
      throw InvalidArgument("DetectorConfig: sizes must be positive");
    }
    for (auto w : widths)
      if (w == 0) throw InvalidArgument("DetectorConfig: stage widths must be positive");
    if (anchors_per_step() == 0) throw InvalidArgument("DetectorConfig: no anchors");
    for (const auto& ws : anchor_widths) {
      if (ws.size() != anchors_per_step()) throw InvalidArgument("DetectorConfig: every level needs the same anchor count");
      for (double w : ws)
        if (!(w > 0)) throw InvalidArgument("DetectorConfig: anchor widths must be positive");
    }
    if (!(neg_iou <= pos_iou) || !(pos_iou > 0) || pos_iou > 1) throw InvalidArgument("DetectorConfig: matching thresholds");
    if (!(chunk_len > 0) || !(chunk_overlap >= 0) || chunk_overlap >= chunk_len) {
      throw InvalidArgument("DetectorConfig: chunking");
    }
    if (roi.bins == 0 || roi.samples == 0) throw InvalidArgument("DetectorConfig: roi options");
  }
};

inline void to_json(nlohmann::json& j, const DetectorConfig& c) {
  j = {{"in_channels", c.in_channels},     {"range_pool", c.range_pool},
       {"widths", c.widths},               {"fpn_width", c.fpn_width},
       {"head_hidden", c.head_hidden},     {"anchor_widths", c.anchor_widths},
       {"reduction", c.reduction == RangeReduction::Mean ? "mean" : "max"},
       {"roi_bins", c.roi.bins},           {"roi_samples", c.roi.samples},
       {"pre_nms_top", c.pre_nms_top},     {"proposal_nms", c.proposal_nms},
       {"post_nms_train", c.post_nms_train}, {"post_nms_test", c.post_nms_test},
       {"pos_iou", c.pos_iou},             {"neg_iou", c.neg_iou},
       {"spn_batch", c.spn_batch},         {"spn_pos_fraction", c.spn_pos_fraction},
       {"roi_batch", c.roi_batch},         {"roi_pos_fraction", c.roi_pos_fraction},
       {"nms_iou", c.nms.iou_threshold},   {"score_threshold", c.nms.score_threshold},
       {"chunk_len", c.chunk_len},         {"chunk_overlap", c.chunk_overlap}};
}

inline void from_json(const nlohmann::json& j, DetectorConfig& c) {
  DetectorConfig d;
  c = d;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("in_channels", c.in_channels);
  get("range_pool", c.range_pool);
  get("widths", c.widths);
  get("fpn_width", c.fpn_width);
  get("head_hidden", c.head_hidden);
  get("anchor_widths", c.anchor_widths);
  if (j.contains("reduction")) {
    const auto r = j.at("reduction").get<std::string>();
    if (r != "mean" && r != "max") throw InvalidArgument("DetectorConfig: reduction must be mean or max");
    c.reduction = r == "mean" ? RangeReduction::Mean : RangeReduction::Max;
  }
  get("roi_bins", c.roi.bins);
  get("roi_samples", c.roi.samples);
  get("pre_nms_top", c.pre_nms_top);
  get("proposal_nms", c.proposal_nms);
  get("post_nms_train", c.post_nms_train);
  get("post_nms_test", c.post_nms_test);
  get("pos_iou", c.pos_iou);
  get("neg_iou", c.neg_iou);
  get("spn_batch", c.spn_batch);
  get("spn_pos_fraction", c.spn_pos_fraction);
  get("roi_batch", c.roi_batch);
  get("roi_pos_fraction", c.roi_pos_fraction);
  get("nms_iou", c.nms.iou_threshold);
  get("score_threshold", c.nms.score_threshold);
  get("chunk_len", c.chunk_len);
  get("chunk_overlap", c.chunk_overlap);
  c.validate();
}

/// Per-level 1D feature maps [F, T_k] after range compression and top-down merge.
struct Pyramid {
  std::array<ad::Tensor, kLevels> maps;
  std::array<double, kLevels> stride_s{};  // seconds per step
  std::size_t steps(std::size_t k) const { return maps[k].dim(1); }
};

struct SpnOutput {
  std::array<ad::Tensor, kLevels> objectness;  // [A, T_k] logits
  std::array<ad::Tensor, kLevels> deltas;      // [2A, T_k]: t_x rows then t_w rows
};

struct HeadTensors {
  ad::Tensor logits;  // [R, 5]
  ad::Tensor deltas;  // [R, 10]: t_x for classes 0..4, then t_w
};

class DetectorModel {
 public:
  DetectorModel() = default;

  DetectorModel(DetectorConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t rp = cfg_.range_pool, F = cfg_.fpn_width, A = cfg_.anchors_per_step();
    conv("stem", cfg_.widths[0], cfg_.in_channels, rp, 4, rng);
    std::size_t prev = cfg_.widths[0];
    for (std::size_t k = 0; k < kLevels; ++k) {
      const std::string s = "stage" + std::to_string(k);
      conv(s + ".down", cfg_.widths[k], prev, 3, 4, rng);
      conv(s + ".res", cfg_.widths[k], cfg_.widths[k], 3, 3, rng);
      prev = cfg_.widths[k];
    }
    for (std::size_t k = 0; k < kLevels; ++k) conv("fpn.lateral" + std::to_string(k), F, cfg_.widths[k], 1, 1, rng);
    conv("spn.trunk", F, F, 1, 3, rng);
    add("spn.obj.w", ad::uniform_param({A, F, 1}, 0.01, rng));
    add("spn.obj.b", ad::zeros_param({A}));
    add("spn.reg.w", ad::uniform_param({2 * A, F, 1}, 0.01, rng));
    add("spn.reg.b", ad::zeros_param({2 * A}));
    const std::size_t in = F * cfg_.roi.bins;
    add("head.fc.w", ad::he_uniform({cfg_.head_hidden, in}, in, rng));
    add("head.fc.b", ad::zeros_param({cfg_.head_hidden}));
    add("head.cls.w", ad::uniform_param({kHeadClasses, cfg_.head_hidden}, 0.01, rng));
    add("head.cls.b", ad::zeros_param({kHeadClasses}));
    add("head.reg.w", ad::uniform_param({2 * kHeadClasses, cfg_.head_hidden}, 0.01, rng));
    add("head.reg.b", ad::zeros_param({2 * kHeadClasses}));
  }

  const DetectorConfig& config() const { return cfg_; }
  ad::ParameterList& parameters() { return params_; }
  const ad::ParameterList& parameters() const { return params_; }

  /// x: [channels, range bins, frames]; frame_hop in seconds.
  Pyramid features(const ad::Tensor& x, double frame_hop) const {
    if (x.rank() != 3 || x.dim(0) != cfg_.in_channels) {
      throw ShapeError("DetectorModel: expected [" + std::to_string(cfg_.in_channels) + ", R, T], got " +
                       ad::shape_str(x.shape()));
    }
    const std::size_t rp = std::min(cfg_.range_pool, x.dim(1));
    if (x.dim(2) < 2 * level_frames(kLevels - 1)) {
      throw ShapeError("DetectorModel: input shorter than " + std::to_string(2 * level_frames(kLevels - 1)) + " frames");
    }
    ad::Tensor w = p("stem.w");
    if (rp != cfg_.range_pool) w = ad::slice(w, 2, 0, rp);
    ad::Tensor h = ad::relu(ad::conv2d(x, w, p("stem.b"), {rp, 2, 0, 1}));
    std::array<ad::Tensor, kLevels> lateral;
    for (std::size_t k = 0; k < kLevels; ++k) {
      const std::string s = "stage" + std::to_string(k);
      h = ad::relu(ad::conv2d(h, p(s + ".down.w"), p(s + ".down.b"), {1, 2, 1, 1}));
      h = ad::relu(ad::add(h, ad::conv2d(h, p(s + ".res.w"), p(s + ".res.b"), {1, 1, 1, 1})));
      ad::Tensor flat = cfg_.reduction == RangeReduction::Mean ? ad::mean_axis(h, 1) : ad::max_axis(h, 1);
      const std::string l = "fpn.lateral" + std::to_string(k);
      lateral[k] = ad::conv1d(flat, squeeze(p(l + ".w")), p(l + ".b"));
    }
    Pyramid out;
    out.maps[kLevels - 1] = lateral[kLevels - 1];
    for (std::size_t k = kLevels - 1; k-- > 0;) {
      out.maps[k] = ad::add(lateral[k], ad::upsample_nearest1d(out.maps[k + 1], 2, lateral[k].dim(1)));
    }
    for (std::size_t k = 0; k < kLevels; ++k) out.stride_s[k] = static_cast<double>(level_frames(k)) * frame_hop;
    return out;
  }

  SpnOutput spn(const Pyramid& pyr) const {
    SpnOutput out;
    for (std::size_t k = 0; k < kLevels; ++k) {
      auto t = ad::relu(ad::conv1d(pyr.maps[k], squeeze(p("spn.trunk.w")), p("spn.trunk.b"), 1, 1));
      out.objectness[k] = ad::conv1d(t, p("spn.obj.w"), p("spn.obj.b"));
      out.deltas[k] = ad::conv1d(t, p("spn.reg.w"), p("spn.reg.b"));
    }
    return out;
  }

  /// Pyramid level whose anchor scales best match a segment of width w.
  std::size_t level_for_width(double w) const {
    for (std::size_t k = 0; k + 1 < kLevels; ++k) {
      const double hi = *std::max_element(cfg_.anchor_widths[k].begin(), cfg_.anchor_widths[k].end());
      const double lo = *std::min_element(cfg_.anchor_widths[k + 1].begin(), cfg_.anchor_widths[k + 1].end());
      if (w < std::sqrt(hi * lo)) return k;
    }
    return kLevels - 1;
  }

  /// Head over RoIs; output rows follow the input order.
  HeadTensors head(const Pyramid& pyr, const std::vector<Interval>& rois) const {
    std::array<std::vector<Interval>, kLevels> by_level;
    std::array<std::vector<std::size_t>, kLevels> members;
    for (std::size_t i = 0; i < rois.size(); ++i) {
      const std::size_t k = level_for_width(rois[i].t_end - rois[i].t_start);
      by_level[k].push_back(rois[i]);
      members[k].push_back(i);
    }
    std::vector<ad::Tensor> parts;
    std::vector<std::size_t> row_of(rois.size());
    std::size_t row = 0;
    for (std::size_t k = 0; k < kLevels; ++k) {
      if (by_level[k].empty()) continue;
      parts.push_back(roi_align_1d(pyr.maps[k], pyr.stride_s[k], by_level[k], cfg_.roi));
      for (std::size_t i : members[k]) row_of[i] = row++;
    }
    if (parts.empty()) return {};
    ad::Tensor feats = parts.size() == 1 ? parts[0] : ad::concat(parts, 0);
    const std::size_t width = feats.dim(1);
    bool identity = true;
    for (std::size_t i = 0; i < row_of.size(); ++i) identity = identity && row_of[i] == i;
    if (!identity) {
      std::vector<std::size_t> idx;
      idx.reserve(rois.size() * width);
      for (std::size_t i = 0; i < rois.size(); ++i)
        for (std::size_t c = 0; c < width; ++c) idx.push_back(row_of[i] * width + c);
      feats = ad::reshape(ad::take(feats, idx), {rois.size(), width});
    }
    auto h = ad::relu(ad::linear(feats, p("head.fc.w"), p("head.fc.b")));
    return {ad::linear(h, p("head.cls.w"), p("head.cls.b")), ad::linear(h, p("head.reg.w"), p("head.reg.b"))};
  }

  /// Anchors matching the pyramid's step counts, in SPN output order.
  std::vector<Anchor> anchors(const Pyramid& pyr) const {
    std::vector<Anchor> out;
    for (std::size_t k = 0; k < kLevels; ++k)
      append_level_anchors(out, k, pyr.steps(k), pyr.stride_s[k], cfg_.anchor_widths[k]);
    return out;
  }

  /// Flat index into objectness[k] for anchor (step j, scale a); deltas use the same index
  /// for t_x and index + A * T_k for t_w.
  static std::size_t spn_index(std::size_t a, std::size_t j, std::size_t steps) { return a * steps + j; }

  static std::size_t level_frames(std::size_t k) { return DetectorConfig::level_stride_frames(k); }

  const ad::Tensor& p(const std::string& name) const {
    for (const auto& np : params_)
      if (np.name == name) return np.tensor;
    throw InvalidArgument("DetectorModel: no parameter " + name);
  }

 private:
  void add(std::string name, ad::Tensor t) { params_.push_back({std::move(name), std::move(t)}); }

  // Conv weight [co, ci, kh, kw]; kh == 1 and 1D use is handled by squeeze().
  void conv(const std::string& name, std::size_t co, std::size_t ci, std::size_t kh, std::size_t kw, Rng& rng) {
    add(name + ".w", ad::he_uniform({co, ci, kh, kw}, ci * kh * kw, rng));
    add(name + ".b", ad::zeros_param({co}));
  }

  static ad::Tensor squeeze(const ad::Tensor& w) { return ad::reshape(w, {w.dim(0), w.dim(1), w.dim(3)}); }

  DetectorConfig cfg_;
  ad::ParameterList params_;
};

/// Stack frames [first, first + count) as a [3, bins, count] tensor.
inline ad::Tensor stack_tensor(const preproc::SpectrogramStack& s, std::size_t first, std::size_t count) {
  if (first + count > s.frames) throw ShapeError("stack_tensor: frame range past the end of the stack");
  std::vector<double> v(preproc::kChannels * s.bins * count);
  for (std::size_t c = 0; c < preproc::kChannels; ++c)
    for (std::size_t r = 0; r < s.bins; ++r) {
      const double* src = s.values.data() + (c * s.bins + r) * s.frames + first;
      std::copy(src, src + count, v.begin() + static_cast<std::ptrdiff_t>((c * s.bins + r) * count));
    }
  return ad::Tensor::from({preproc::kChannels, s.bins, count}, std::move(v));
}

}  // namespace rosa::detect
