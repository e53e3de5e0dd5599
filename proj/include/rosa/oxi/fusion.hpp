#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rosa/ad/init.hpp"
#include "rosa/ad/ops.hpp"
#include "rosa/ad/optim.hpp"
#include "rosa/core/rng.hpp"
#include "rosa/detect/segment_math.hpp"
#include "rosa/oxi/features.hpp"

namespace rosa::oxi {

inline constexpr std::size_t kFeatureCount = 4;
inline constexpr std::size_t kFusionClasses = 5;  // non-SAE, CA, OA, MA, HP

struct FusionSample {
  std::array<double, kFeatureCount> x{};
  std::size_t label = 0;  // 0 non-SAE, else event kind + 1
};

/// Everything the builder needs from one training night.
struct FusionNight {
  const CleanTrace* trace = nullptr;
  std::vector<AnnotatedEvent> events;
  const Hypnogram* hypnogram = nullptr;
};

struct FusionDatasetOptions {
  double min_event_distance = 90.0;  // s between a negative window and any event
  double pseudo_duration = 30.0;     // s, length of an event-free pseudo-segment
  FeatureOptions features;
};

struct FusionDataset {
  std::vector<FusionSample> samples;
  bool resampled = false;  // some night had too few event-free positions and drew with replacement
};

/// One labelled vector per annotated event with usable oximetry, and as many event-free
/// pseudo-segments per night, drawn uniformly from sleep positions far from every event.
inline FusionDataset build_fusion_dataset(std::span<const FusionNight> nights, std::uint64_t seed,
                                          const FusionDatasetOptions& opt = {}) {
  FusionDataset ds;
  Rng rng(seed);
  for (const auto& night : nights) {
    const auto& t = *night.trace;
    std::size_t positives = 0;
    for (const auto& e : night.events) {
      const auto f = extract_features(t, e.t_end, opt.features);
      if (!f.available) continue;
      ds.samples.push_back({f.as_array(), static_cast<std::size_t>(e.kind) + 1});
      ++positives;
    }
    if (positives == 0) continue;
    // Candidate pseudo-segment ends on the 1 s grid; segment plus window keeps clear of events.
    const double span = static_cast<double>(t.size()) / t.rate;
    std::vector<double> pool;
    for (double end = opt.pseudo_duration; end + opt.features.window <= span; end += 1.0) {
      const double lo = end - opt.pseudo_duration, hi = end + opt.features.window;
      bool ok = !night.hypnogram || night.hypnogram->stages.empty() || night.hypnogram->at(end) != Stage::W;
      for (const auto& e : night.events) {
        if (!ok) break;
        ok = hi + opt.min_event_distance <= e.t_start || lo >= e.t_end + opt.min_event_distance;
      }
      if (ok) pool.push_back(end);
    }
    if (pool.empty()) continue;
    const bool replace = pool.size() < positives;
    ds.resampled |= replace;
    if (!replace) rng.shuffle(pool);
    for (std::size_t k = 0; k < positives; ++k) {
      const double end = replace ? pool[rng.below(pool.size())] : pool[k];
      const auto f = extract_features(t, end, opt.features);
      ds.samples.push_back({f.as_array(), 0});
    }
  }
  return ds;
}

struct FusionTrainConfig {
  ad::TrainConfig base{{1e-2}, {1e-2, 1e-4, 400}, 400, 0};
  std::size_t hidden = 16;
};

/// Three fully connected layers over standardized features.
class FusionNet {
 public:
  FusionNet() = default;

  FusionNet(std::size_t hidden, std::uint64_t seed) {
    Rng rng(seed);
    add("fc1.w", ad::he_uniform({hidden, kFeatureCount}, kFeatureCount, rng));
    add("fc1.b", ad::zeros_param({hidden}));
    add("fc2.w", ad::he_uniform({hidden, hidden}, hidden, rng));
    add("fc2.b", ad::zeros_param({hidden}));
    add("fc3.w", ad::uniform_param({kFusionClasses, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng));
    add("fc3.b", ad::zeros_param({kFusionClasses}));
  }

  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }
  ad::ParameterList& parameters() { return params_; }
  const ad::ParameterList& parameters() const { return params_; }
  std::array<double, kFeatureCount>& mean() { return mean_; }
  std::array<double, kFeatureCount>& scale() { return scale_; }

  /// x: [B, 4] raw features. Returns logits [B, 5].
  ad::Tensor logits(const ad::Tensor& x) const {
    if (params_.empty()) throw InvalidArgument("FusionNet: empty network");
    if (x.rank() != 2 || x.dim(1) != kFeatureCount) throw ShapeError("FusionNet: expected [B, 4] features");
    std::vector<double> zv(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < zv.size(); ++i) zv[i] = (zv[i] - mean_[i % kFeatureCount]) / scale_[i % kFeatureCount];
    const auto z = ad::Tensor::from(x.shape(), std::move(zv));
    const auto h1 = ad::relu(ad::linear(z, p(0), p(1)));
    const auto h2 = ad::relu(ad::linear(h1, p(2), p(3)));
    return ad::linear(h2, p(4), p(5));
  }

  std::array<double, kFusionClasses> probabilities(const SpO2Features& f) const {
    ad::NoGradGuard ng;
    const auto a = f.as_array();
    const auto prob = ad::softmax(logits(ad::Tensor::from({1, kFeatureCount}, std::vector<double>(a.begin(), a.end()))));
    std::array<double, kFusionClasses> out{};
    for (std::size_t c = 0; c < kFusionClasses; ++c) out[c] = prob[c];
    return out;
  }

  /// SpO2-based event score: 1 - P(non-SAE).
  double score(const SpO2Features& f) const {
    if (!trained_) throw InvalidArgument("FusionNet: scoring with an untrained network");
    return score_from_probabilities(probabilities(f));
  }

  static double score_from_probabilities(const std::array<double, kFusionClasses>& p) {
    return std::clamp(1.0 - p[0], 0.0, 1.0);
  }

 private:
  const ad::Tensor& p(std::size_t i) const { return params_[i].tensor; }
  void add(std::string name, ad::Tensor t) { params_.push_back({std::move(name), std::move(t)}); }

  ad::ParameterList params_;
  std::array<double, kFeatureCount> mean_{0, 0, 0, 0};
  std::array<double, kFeatureCount> scale_{1, 1, 1, 1};
  bool trained_ = false;
};

inline ad::Tensor feature_matrix(std::span<const FusionSample> s) {
  std::vector<double> v;
  v.reserve(s.size() * kFeatureCount);
  for (const auto& x : s) v.insert(v.end(), x.x.begin(), x.x.end());
  return ad::Tensor::from({s.size(), kFeatureCount}, std::move(v));
}

/// Full-batch Adam on unweighted cross-entropy.
inline FusionNet train_fusion(const FusionDataset& ds, const FusionTrainConfig& tc) {
  tc.base.validate();
  if (ds.samples.empty()) throw InvalidArgument("train_fusion: empty dataset");
  FusionNet net(tc.hidden, Rng::mix(tc.base.seed, 3));
  const double n = static_cast<double>(ds.samples.size());
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    double m = 0, sq = 0;
    for (const auto& s : ds.samples) m += s.x[j] / n;
    for (const auto& s : ds.samples) sq += (s.x[j] - m) * (s.x[j] - m) / n;
    net.mean()[j] = m;
    net.scale()[j] = sq > 1e-12 ? std::sqrt(sq) : 1.0;
  }
  const auto x = feature_matrix(ds.samples);
  std::vector<std::size_t> y;
  for (const auto& s : ds.samples) y.push_back(s.label);
  ad::Adam adam(tc.base.adam);
  auto& params = net.parameters();
  for (int e = 0; e < tc.base.epochs; ++e) {
    ad::zero_grads(params);
    auto loss = ad::cross_entropy(net.logits(x), y);
    if (!std::isfinite(loss.item())) break;
    loss.backward();
    adam.step(params, tc.base.schedule.at(e));
  }
  net.mark_trained();
  return net;
}

struct FusionOptions {
  double omega = 0.5;
  detect::NmsOptions nms;
  FeatureOptions features;
};

struct FusedSegment {
  DetectedSegment segment;  // score holds p_f
  double p_r = 0.0;
  double p_s = 0.0;
  bool oximetry = true;  // false: no valid SpO2 in the window, p_f = p_r
};

inline double fuse_score(double p_r, double p_s, double omega) { return omega * p_s + (1.0 - omega) * p_r; }

/// Rescores radar detections with the SpO2 network, then re-thresholds and re-runs
/// per-class NMS on the fused score. Output sorted by start time.
inline std::vector<FusedSegment> soft_fuse(std::span<const DetectedSegment> dets, const CleanTrace& trace,
                                           const FusionNet& net, const FusionOptions& opt = {}) {
  if (!(opt.omega >= 0.0 && opt.omega <= 1.0)) throw InvalidArgument("soft_fuse: omega outside [0, 1]");
  std::vector<FusedSegment> all;
  all.reserve(dets.size());
  for (const auto& d : dets) {
    FusedSegment f{d, d.score, 0.0, true};
    const auto feat = trace.all_invalid ? SpO2Features{0, 0, 0, 0, false, false}
                                        : extract_features(trace, d.t_end, opt.features);
    if (!feat.available) {
      f.oximetry = false;
    } else {
      f.p_s = net.score(feat);
      f.segment.score = fuse_score(d.score, f.p_s, opt.omega);
    }
    all.push_back(f);
  }
  std::vector<DetectedSegment> segs;
  for (const auto& f : all) segs.push_back(f.segment);
  // NMS output is in rank order; carry p_r/p_s along by matching the surviving segment.
  const auto kept = detect::nms_1d(segs, opt.nms);
  std::vector<FusedSegment> out;
  std::vector<std::uint8_t> used(all.size(), 0);
  for (const auto& k : kept)
    for (std::size_t i = 0; i < all.size(); ++i)
      if (!used[i] && all[i].segment == k) {
        used[i] = 1;
        out.push_back(all[i]);
        break;
      }
  std::stable_sort(out.begin(), out.end(),
                   [](const FusedSegment& a, const FusedSegment& b) { return a.segment.t_start < b.segment.t_start; });
  return out;
}

inline std::vector<DetectedSegment> segments_of(std::span<const FusedSegment> f) {
  std::vector<DetectedSegment> out;
  out.reserve(f.size());
  for (const auto& x : f) out.push_back(x.segment);
  return out;
}

}  // namespace rosa::oxi
