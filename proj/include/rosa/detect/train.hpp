#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "rosa/ad/optim.hpp"
#include "rosa/detect/inference.hpp"
#include "rosa/metrics/detection.hpp"

namespace rosa::detect {

/// One night for training or validation: normalized stack plus its annotations (s).
struct LabeledNight {
  const preproc::SpectrogramStack* stack = nullptr;
  std::vector<AnnotatedEvent> events;
};

struct DetectorTrainConfig {
  ad::TrainConfig base{{1e-3}, {1e-3, 1e-5, 150}, 150, 0};
  std::size_t crops_per_night = 8;
  double crop_len = 600;          // s
  double event_centred_crops = 0.5;  // fraction of crops centred on a random annotation
  std::size_t eval_every = 1;     // epochs between validation passes
};

struct DetectorTrainResult {
  DetectorModel model;
  std::vector<double> epoch_loss;
  std::vector<double> val_ap;  // one per validation pass
  int best_epoch = -1;
  bool diverged = false;
  std::size_t skipped_steps = 0;
};

/// Inverse-frequency head weights; Normal gets 1, event classes are clipped to [0.25, 4].
inline std::vector<double> head_class_weights(std::span<const LabeledNight> nights) {
  std::array<double, kHeadClasses> n{};
  double total = 0;
  for (const auto& night : nights)
    for (const auto& e : night.events) {
      n[class_of_kind(e.kind)] += 1;
      total += 1;
    }
  std::vector<double> w(kHeadClasses, 1.0);
  if (total == 0) return w;
  for (std::size_t c = 1; c < kHeadClasses; ++c) {
    const double f = n[c] > 0 ? total / (4.0 * n[c]) : 4.0;
    w[c] = std::clamp(f, 0.25, 4.0);
  }
  return w;
}

/// Annotations overlapping [t0, t0 + len), clipped and shifted to crop-local time;
/// pieces shorter than 5 s are dropped.
inline std::vector<AnnotatedEvent> crop_events(std::span<const AnnotatedEvent> events, double t0, double len) {
  std::vector<AnnotatedEvent> out;
  for (const auto& e : events) {
    const double s = std::max(e.t_start, t0) - t0, f = std::min(e.t_end, t0 + len) - t0;
    if (f - s >= 5.0) out.push_back({e.kind, s, f});
  }
  return out;
}

inline double validation_ap(const DetectorModel& model, std::span<const LabeledNight> val) {
  std::vector<metrics::EvalSet> sets;
  for (const auto& n : val) sets.push_back({detect_events(model, *n.stack), n.events});
  return metrics::overall_average_precision(sets).value_or(0.0);
}

/// Adam on single-crop steps with cosine-annealed rate. Keeps the parameters of the
/// best validation AP (or the final ones without validation nights). A non-finite
/// loss stops training and returns the last good parameters.
inline DetectorTrainResult train_detector(std::span<const LabeledNight> train, std::span<const LabeledNight> val,
                                          const DetectorConfig& cfg, const DetectorTrainConfig& tc,
                                          const std::function<void(int, double)>& on_epoch = {}) {
  tc.base.validate();
  if (train.empty()) throw InvalidArgument("train_detector: no training nights");
  DetectorTrainResult res{DetectorModel(cfg, Rng::mix(tc.base.seed, 1)), {}, {}, -1, false, 0};
  auto& params = res.model.parameters();
  ad::Adam adam(tc.base.adam);
  Rng rng(Rng::mix(tc.base.seed, 2));
  const auto weights = head_class_weights(train);
  auto best = ad::snapshot_values(params);
  double best_ap = -1.0;
  auto last_good = best;

  for (int epoch = 0; epoch < tc.base.epochs; ++epoch) {
    const double lr = tc.base.schedule.at(epoch);
    double loss_sum = 0;
    std::size_t steps = 0;
    for (std::size_t n = 0; n < train.size() && !res.diverged; ++n) {
      const auto& night = train[n];
      const double hop = night.stack->frame_hop;
      const auto L = std::min(night.stack->frames, static_cast<std::size_t>(std::llround(tc.crop_len / hop)));
      const std::size_t span_frames = night.stack->frames - L;
      for (std::size_t c = 0; c < tc.crops_per_night; ++c) {
        std::size_t first = span_frames ? rng.below(span_frames + 1) : 0;
        if (!night.events.empty() && rng.bernoulli(tc.event_centred_crops)) {
          const auto& e = night.events[rng.below(night.events.size())];
          const double centre = e.midpoint() / hop + rng.uniform(-0.3, 0.3) * static_cast<double>(L);
          first = static_cast<std::size_t>(
              std::clamp(centre - 0.5 * static_cast<double>(L), 0.0, static_cast<double>(span_frames)));
        }
        const double t0 = static_cast<double>(first) * hop, len = static_cast<double>(L) * hop;
        const auto gts = crop_events(night.events, t0, len);
        const auto x = stack_tensor(*night.stack, first, L);
        DetectionTargets targets;
        {
          ad::NoGradGuard ng;
          const auto pyr = res.model.features(x, hop);
          targets = make_targets(res.model, pyr, res.model.spn(pyr), gts, len, rng);
        }
        ad::zero_grads(params);
        auto loss = crop_loss(res.model, x, hop, targets, weights);
        const double v = loss.total.item();
        if (!std::isfinite(v)) {
          res.diverged = true;
          ad::restore_values(params, last_good);
          break;
        }
        loss.total.backward();
        if (adam.step(params, lr)) last_good = ad::snapshot_values(params);
        loss_sum += v;
        ++steps;
      }
    }
    if (res.diverged) break;
    res.epoch_loss.push_back(steps ? loss_sum / static_cast<double>(steps) : 0.0);
    if (on_epoch) on_epoch(epoch, res.epoch_loss.back());
    const bool last = epoch + 1 == tc.base.epochs;
    if (!val.empty() && tc.eval_every > 0 && ((epoch + 1) % static_cast<int>(tc.eval_every) == 0 || last)) {
      const double ap = validation_ap(res.model, val);
      res.val_ap.push_back(ap);
      if (ap > best_ap) {
        best_ap = ap;
        best = ad::snapshot_values(params);
        res.best_epoch = epoch;
      }
    }
  }
  res.skipped_steps = adam.skipped();
  if (!val.empty() && res.best_epoch >= 0 && !res.diverged) ad::restore_values(params, best);
  if (val.empty() && !res.diverged) res.best_epoch = static_cast<int>(res.epoch_loss.size()) - 1;
  return res;
}

}  // namespace rosa::detect
