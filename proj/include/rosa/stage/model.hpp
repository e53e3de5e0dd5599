#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosa/ad/init.hpp"
#include "rosa/ad/ops.hpp"
#include "rosa/core/labels.hpp"
#include "rosa/core/rng.hpp"
#include "rosa/preproc/spectrogram.hpp"
#include "rosa/stage/crf.hpp"

namespace rosa::stage {

struct StagerConfig {
  double epoch_len = 30.0;  // s
  std::size_t range_pool = 5;
  std::size_t channels = 8;
  std::size_t hidden = 16;
  bool center_per_night = true;  // subtract each night's mean from every epoch feature

  void validate() const {
    if (!(epoch_len > 0) || range_pool == 0 || channels == 0 || hidden == 0) {
      throw InvalidArgument("StagerConfig: sizes must be positive");
    }
  }
};

inline void to_json(nlohmann::json& j, const StagerConfig& c) {
  j = {{"epoch_len", c.epoch_len}, {"range_pool", c.range_pool}, {"channels", c.channels},
       {"hidden", c.hidden}, {"center_per_night", c.center_per_night}};
}

inline void from_json(const nlohmann::json& j, StagerConfig& c) {
  c = StagerConfig{};
  if (j.contains("epoch_len")) j.at("epoch_len").get_to(c.epoch_len);
  if (j.contains("range_pool")) j.at("range_pool").get_to(c.range_pool);
  if (j.contains("channels")) j.at("channels").get_to(c.channels);
  if (j.contains("hidden")) j.at("hidden").get_to(c.hidden);
  if (j.contains("center_per_night")) j.at("center_per_night").get_to(c.center_per_night);
  c.validate();
}

inline constexpr std::size_t kEpochFeatures = 2 * preproc::kChannels;  // mean and SD per channel

/// Stack pooled to epochs: [6, bins, N] holding the mean and SD of each channel
/// over the frames of every epoch. Trailing frames short of an epoch are dropped.
inline ad::Tensor epoch_features(const preproc::SpectrogramStack& s, const StagerConfig& cfg) {
  const auto L = static_cast<std::size_t>(std::llround(cfg.epoch_len / s.frame_hop));
  if (L == 0 || s.frames < L) throw InvalidArgument("epoch_features: stack shorter than one epoch");
  const std::size_t N = s.frames / L, B = s.bins;
  std::vector<double> v(kEpochFeatures * B * N);
  for (std::size_t c = 0; c < preproc::kChannels; ++c)
    for (std::size_t r = 0; r < B; ++r)
      for (std::size_t e = 0; e < N; ++e) {
        double sum = 0, sq = 0;
        for (std::size_t k = e * L; k < (e + 1) * L; ++k) {
          const double x = s.at(static_cast<preproc::Channel>(c), r, k);
          sum += x;
          sq += x * x;
        }
        const double mean = sum / static_cast<double>(L);
        v[((2 * c) * B + r) * N + e] = mean;
        v[((2 * c + 1) * B + r) * N + e] = std::sqrt(std::max(0.0, sq / static_cast<double>(L) - mean * mean));
      }
  if (cfg.center_per_night) {
    for (std::size_t row = 0; row < kEpochFeatures * B; ++row) {
      double m = 0;
      for (std::size_t e = 0; e < N; ++e) m += v[row * N + e];
      m /= static_cast<double>(N);
      for (std::size_t e = 0; e < N; ++e) v[row * N + e] -= m;
    }
  }
  return ad::Tensor::from({kEpochFeatures, B, N}, std::move(v));
}

/// Conv encoder with a gated skip blend, range pooling, a single LSTM over
/// epochs and a linear read-out to five stage logits, plus CRF transitions.
class StagerModel {
 public:
  StagerModel() = default;

  StagerModel(StagerConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t C = cfg_.channels, H = cfg_.hidden, rp = cfg_.range_pool;
    add("enc1.w", ad::he_uniform({C, kEpochFeatures, rp, 3}, kEpochFeatures * rp * 3, rng));
    add("enc1.b", ad::zeros_param({C}));
    add("enc2.w", ad::he_uniform({C, C, 3, 3}, C * 9, rng));
    add("enc2.b", ad::zeros_param({C}));
    add("gate.w", ad::uniform_param({C, C, 1, 1}, 1.0 / std::sqrt(static_cast<double>(C)), rng));
    add("gate.b", ad::zeros_param({C}));
    const double lb = 1.0 / std::sqrt(static_cast<double>(H));
    add("lstm.w_ih", ad::uniform_param({4 * H, 2 * C}, lb, rng));
    add("lstm.w_hh", ad::uniform_param({4 * H, H}, lb, rng));
    add("lstm.b", ad::zeros_param({4 * H}));
    add("out.w", ad::uniform_param({kNumStages, H}, lb, rng));
    add("out.b", ad::zeros_param({kNumStages}));
    add("crf.transitions", ad::zeros_param({kNumStages, kNumStages}));
  }

  const StagerConfig& config() const { return cfg_; }
  ad::ParameterList& parameters() { return params_; }
  const ad::ParameterList& parameters() const { return params_; }
  const ad::Tensor& transitions() const { return p("crf.transitions"); }

  /// Every parameter except the CRF transitions.
  ad::ParameterList network_parameters() const {
    ad::ParameterList out;
    for (const auto& np : params_)
      if (np.name != "crf.transitions") out.push_back(np);
    return out;
  }

  /// features: output of epoch_features. Returns logits [N, 5].
  ad::Tensor forward_logits(const ad::Tensor& features) const {
    if (features.rank() != 3 || features.dim(0) != kEpochFeatures || features.dim(2) == 0) {
      throw ShapeError("StagerModel: expected [" + std::to_string(kEpochFeatures) + ", R, N], got " +
                       ad::shape_str(features.shape()));
    }
    const std::size_t rp = std::min(cfg_.range_pool, features.dim(1)), H = cfg_.hidden;
    ad::Tensor w1 = p("enc1.w");
    if (rp != cfg_.range_pool) w1 = ad::slice(w1, 2, 0, rp);
    const auto h1 = ad::relu(ad::conv2d(features, w1, p("enc1.b"), {rp, 1, 0, 1}));
    const auto h2 = ad::relu(ad::conv2d(h1, p("enc2.w"), p("enc2.b"), {1, 1, 1, 1}));
    const auto g = ad::sigmoid(ad::conv2d(ad::add(h1, h2), p("gate.w"), p("gate.b")));
    const auto fused = ad::add(ad::mul(g, h1), ad::mul(ad::affine(g, -1.0, 1.0), h2));
    const auto seq = ad::transpose(ad::concat({ad::mean_axis(fused, 1), ad::max_axis(fused, 1)}, 0));  // [N, 2C]
    const std::size_t N = seq.dim(0), I = seq.dim(1);
    ad::Tensor state = ad::Tensor::zeros({2 * H});
    std::vector<ad::Tensor> hs;
    hs.reserve(N);
    for (std::size_t n = 0; n < N; ++n) {
      state = ad::lstm_cell(ad::reshape(ad::slice(seq, 0, n, n + 1), {I}), state, p("lstm.w_ih"), p("lstm.w_hh"),
                            p("lstm.b"));
      hs.push_back(ad::slice(state, 0, 0, H));
    }
    const auto hidden = ad::reshape(ad::concat(hs, 0), {N, H});
    return ad::linear(hidden, p("out.w"), p("out.b"));
  }

  ad::Tensor forward_logits(const preproc::SpectrogramStack& stack) const {
    return forward_logits(epoch_features(stack, cfg_));
  }

  /// Viterbi hypnogram under the learned transitions.
  Hypnogram decode(const ad::Tensor& logits) const {
    const auto path = viterbi_decode(logits.data(), transitions().data(), kNumStages);
    Hypnogram h;
    h.epoch_len = cfg_.epoch_len;
    for (auto s : path) h.stages.push_back(static_cast<Stage>(s));
    return h;
  }

  const ad::Tensor& p(const std::string& name) const {
    for (const auto& np : params_)
      if (np.name == name) return np.tensor;
    throw InvalidArgument("StagerModel: no parameter " + name);
  }

 private:
  void add(std::string name, ad::Tensor t) { params_.push_back({std::move(name), std::move(t)}); }

  StagerConfig cfg_;
  ad::ParameterList params_;
};

}  // namespace rosa::stage
