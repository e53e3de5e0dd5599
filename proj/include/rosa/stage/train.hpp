#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "rosa/ad/optim.hpp"
#include "rosa/metrics/ahi.hpp"
#include "rosa/stage/losses.hpp"
#include "rosa/stage/model.hpp"

namespace rosa::stage {

enum class Granularity { WS, WRLD, WRNN };

inline std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::WS: return "WS";
    case Granularity::WRLD: return "WRLD";
    case Granularity::WRNN: return "WRNN";
  }
  return "?";
}

inline std::size_t class_count(Granularity g) {
  switch (g) {
    case Granularity::WS: return 2;
    case Granularity::WRLD: return 4;
    case Granularity::WRNN: return 5;
  }
  return 0;
}

/// Coarse label of a stage. WS: W=0, Sleep=1. WRLD: W=0, R=1, Light=2, Deep=3.
/// WRNN: W=0, R=1, N1=2, N2=3, N3=4.
inline int coarse_label(Stage s, Granularity g) {
  switch (g) {
    case Granularity::WS: return s == Stage::W ? 0 : 1;
    case Granularity::WRLD:
      switch (s) {
        case Stage::W: return 0;
        case Stage::R: return 1;
        case Stage::N1:
        case Stage::N2: return 2;
        case Stage::N3: return 3;
      }
      break;
    case Granularity::WRNN:
      switch (s) {
        case Stage::W: return 0;
        case Stage::R: return 1;
        case Stage::N1: return 2;
        case Stage::N2: return 3;
        case Stage::N3: return 4;
      }
      break;
  }
  throw InvalidArgument("coarse_label: invalid stage");
}

inline std::string_view coarse_name(int label, Granularity g) {
  static constexpr std::array<std::string_view, 2> ws{"W", "S"};
  static constexpr std::array<std::string_view, 4> wrld{"W", "R", "Light", "Deep"};
  static constexpr std::array<std::string_view, 5> wrnn{"W", "R", "N1", "N2", "N3"};
  const auto i = static_cast<std::size_t>(label);
  switch (g) {
    case Granularity::WS: return ws.at(i);
    case Granularity::WRLD: return wrld.at(i);
    case Granularity::WRNN: return wrnn.at(i);
  }
  return "?";
}

inline std::vector<int> map_hypnogram(const Hypnogram& h, Granularity g) {
  std::vector<int> out;
  out.reserve(h.size());
  for (auto s : h.stages) out.push_back(coarse_label(s, g));
  return out;
}

/// Hours spent in any non-Wake stage.
inline double total_sleep_time_h(const Hypnogram& h) { return metrics::total_sleep_hours(h); }

struct StagePrediction {
  Hypnogram hypnogram;
  std::vector<int> labels;  // at the requested granularity
  double tst_h = 0.0;
};

inline StagePrediction predict_hypnogram(const StagerModel& model, const preproc::SpectrogramStack& stack,
                                         Granularity g = Granularity::WRNN) {
  ad::NoGradGuard no_grad;
  StagePrediction out;
  out.hypnogram = model.decode(model.forward_logits(stack));
  out.labels = map_hypnogram(out.hypnogram, g);
  out.tst_h = total_sleep_time_h(out.hypnogram);
  return out;
}

/// One night: normalized stack and its scored hypnogram.
struct StagedNight {
  const preproc::SpectrogramStack* stack = nullptr;
  const Hypnogram* truth = nullptr;
};

struct StagerTrainConfig {
  ad::TrainConfig stage1{{1e-3}, {3e-3, 1e-4, 100}, 100, 0};
  int stage2_epochs = 100;
  ad::CosineSchedule stage2_schedule{1e-3, 1e-5, 100};
  LossWeights weights{1.0, 1.0, 1.0, 0.0};
  DurationConfig duration{{60, 30, 30, 60, 60}, 30.0, false, true};
  std::size_t window_epochs = 0;      // 0 trains on whole nights; else random windows of this many epochs
  std::size_t windows_per_night = 1;  // steps per night and epoch when windowed
};

struct StagerTrainResult {
  StagerModel model;
  std::vector<double> epoch_loss;  // mean over nights, both stages in order
  std::vector<double> stage1_transitions;  // A at the end of stage 1
  bool diverged = false;
  std::size_t skipped_steps = 0;
};

/// Inverse stage frequency over the training nights, normalized to mean 1 over the
/// stages that occur; absent stages get weight 1.
inline std::vector<double> stage_class_weights(std::span<const StagedNight> nights) {
  std::array<double, kNumStages> n{};
  for (const auto& night : nights)
    for (auto s : night.truth->stages) n[static_cast<std::size_t>(s)] += 1;
  std::vector<double> w(kNumStages, 1.0);
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < kNumStages; ++i)
    if (n[i] > 0) {
      w[i] = 1.0 / n[i];
      sum += w[i];
      ++present;
    }
  if (present == 0) return std::vector<double>(kNumStages, 1.0);
  for (std::size_t i = 0; i < kNumStages; ++i)
    if (n[i] > 0) w[i] *= static_cast<double>(present) / sum;
  return w;
}

namespace detail {

struct NightData {
  ad::Tensor features;
  std::vector<std::size_t> truth;
};

inline NightData prepare(const StagedNight& n, const StagerConfig& cfg) {
  NightData d{epoch_features(*n.stack, cfg), {}};
  const std::size_t N = std::min(d.features.dim(2), n.truth->size());
  if (N == 0) throw InvalidArgument("two_stage_train: night without scored epochs");
  if (N < d.features.dim(2)) d.features = ad::slice(d.features, 2, 0, N);
  for (std::size_t i = 0; i < N; ++i) d.truth.push_back(static_cast<std::size_t>(n.truth->stages[i]));
  return d;
}

}  // namespace detail

inline LossParts stager_loss_parts(const StagerModel& model, const ad::Tensor& features,
                                   std::span<const std::size_t> truth, std::span<const double> class_weights,
                                   const LossWeights& w, const DurationConfig& dur) {
  const auto logits = model.forward_logits(features);
  LossParts parts;
  if (w.alpha != 0) parts.focal = focal_loss(logits, truth, class_weights);
  if (w.beta != 0) parts.change = change_loss(logits);
  if (w.gamma != 0) parts.duration = duration_loss(logits, dur);
  if (w.eta != 0) parts.crf = crf_nll(logits, model.transitions(), truth);
  return parts;
}

/// Stage 1 trains every parameter but the transitions with the CRF weight at 0;
/// stage 2 sets it to 1 and trains all parameters. One Adam step per night (or per
/// window) and epoch. A non-finite loss aborts with the last good parameters.
inline StagerTrainResult two_stage_train(std::span<const StagedNight> nights, const StagerConfig& cfg,
                                         const StagerTrainConfig& tc,
                                         const std::function<void(int, double)>& on_epoch = {}) {
  tc.stage1.validate();
  if (nights.empty()) throw InvalidArgument("two_stage_train: no training nights");
  if (tc.stage2_epochs < 0) throw InvalidArgument("two_stage_train: negative stage-2 epochs");
  StagerTrainResult res{StagerModel(cfg, Rng::mix(tc.stage1.seed, 1)), {}, {}, false, 0};
  std::vector<detail::NightData> data;
  data.reserve(nights.size());
  for (const auto& n : nights) data.push_back(detail::prepare(n, cfg));
  const auto weights = stage_class_weights(nights);
  Rng rng(Rng::mix(tc.stage1.seed, 2));
  std::vector<std::size_t> order(data.size());

  auto run_stage = [&](ad::ParameterList params, const LossWeights& w, const ad::CosineSchedule& sched, int epochs,
                       int epoch_base) {
    ad::Adam adam(tc.stage1.adam);
    auto last_good = ad::snapshot_values(params);
    for (int e = 0; e < epochs && !res.diverged; ++e) {
      const double lr = sched.at(e);
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      double sum = 0;
      std::size_t steps = 0;
      for (auto i : order) {
        const auto& d = data[i];
        const std::size_t N = d.truth.size();
        const bool windowed = tc.window_epochs > 0 && tc.window_epochs < N;
        for (std::size_t k = 0; k < (windowed ? tc.windows_per_night : 1) && !res.diverged; ++k) {
          ad::Tensor x = d.features;
          std::span<const std::size_t> truth = d.truth;
          if (windowed) {
            const std::size_t first = rng.below(N - tc.window_epochs + 1);
            x = ad::slice(d.features, 2, first, first + tc.window_epochs);
            truth = truth.subspan(first, tc.window_epochs);
          }
          ad::zero_grads(params);
          auto loss = total_loss(w, stager_loss_parts(res.model, x, truth, weights, w, tc.duration));
          const double v = loss.item();
          if (!std::isfinite(v)) {
            res.diverged = true;
            ad::restore_values(params, last_good);
            break;
          }
          loss.backward();
          if (adam.step(params, lr)) last_good = ad::snapshot_values(params);
          sum += v;
          ++steps;
        }
        if (res.diverged) break;
      }
      if (res.diverged) break;
      res.epoch_loss.push_back(sum / static_cast<double>(std::max<std::size_t>(steps, 1)));
      if (on_epoch) on_epoch(epoch_base + e, res.epoch_loss.back());
    }
    res.skipped_steps += adam.skipped();
  };

  LossWeights w1 = tc.weights;
  w1.eta = 0.0;
  run_stage(res.model.network_parameters(), w1, tc.stage1.schedule, tc.stage1.epochs, 0);
  const auto& A = res.model.transitions().data();
  res.stage1_transitions.assign(A.begin(), A.end());
  if (!res.diverged && tc.stage2_epochs > 0) {
    LossWeights w2 = tc.weights;
    w2.eta = 1.0;
    run_stage(res.model.parameters(), w2, tc.stage2_schedule, tc.stage2_epochs, tc.stage1.epochs);
  }
  return res;
}

}  // namespace rosa::stage
