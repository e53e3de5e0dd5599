#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rosa/core/segments.hpp"
#include "rosa/metrics/agreement.hpp"

namespace rosa::metrics {

enum class Severity { Healthy = 0, Mild = 1, Moderate = 2, Severe = 3 };

inline std::string_view to_string(Severity s) {
  constexpr std::array<std::string_view, 4> names{"Healthy", "Mild", "Moderate", "Severe"};
  return names[static_cast<std::size_t>(s)];
}

/// Half-open bands: [0,5) healthy, [5,15) mild, [15,30) moderate, [30,inf) severe.
inline Severity severity_of(double ahi) {
  if (ahi < 5.0) return Severity::Healthy;
  if (ahi < 15.0) return Severity::Mild;
  if (ahi < 30.0) return Severity::Moderate;
  return Severity::Severe;
}

struct AhiReport {
  std::size_t n_apnea = 0;
  std::size_t n_hypopnea = 0;
  double tst_hours = 0.0;
  double ahi = 0.0;
  Severity severity = Severity::Healthy;

  bool operator==(const AhiReport&) const = default;
};

inline double total_sleep_hours(const Hypnogram& h) {
  std::size_t asleep = 0;
  for (auto s : h.stages) asleep += s != Stage::W;
  return static_cast<double>(asleep) * h.epoch_len / 3600.0;
}

/// Counts events whose midpoint falls in a non-wake epoch and divides by TST.
inline AhiReport ahi_and_severity(std::span<const AnnotatedEvent> events, const Hypnogram& hyp) {
  AhiReport r;
  r.tst_hours = total_sleep_hours(hyp);
  if (!(r.tst_hours > 0)) throw InvalidArgument("ahi_and_severity: no sleep detected");
  for (const auto& e : events) {
    const double mid = e.midpoint();
    if (mid < 0) continue;
    const auto epoch = static_cast<std::size_t>(std::floor(mid / hyp.epoch_len));
    if (epoch >= hyp.size() || hyp.stages[epoch] == Stage::W) continue;
    (is_apnea(e.kind) ? r.n_apnea : r.n_hypopnea) += 1;
  }
  r.ahi = static_cast<double>(r.n_apnea + r.n_hypopnea) / r.tst_hours;
  r.severity = severity_of(r.ahi);
  return r;
}

inline AhiReport ahi_and_severity(std::span<const DetectedSegment> dets, const Hypnogram& hyp) {
  std::vector<AnnotatedEvent> ev;
  ev.reserve(dets.size());
  for (const auto& d : dets) ev.push_back(d.as_event());
  return ahi_and_severity(std::span<const AnnotatedEvent>(ev), hyp);
}

struct ThresholdStats {
  double threshold = 0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> se, sp;  // undefined without positives / negatives
  double acc = 0;
  std::optional<double> kappa;
};

struct DiagnosticStats {
  std::vector<ThresholdStats> thresholds;
  std::array<std::array<std::size_t, 4>, 4> severity_confusion{};  // [true][estimated]
};

/// At each threshold t the positive class is AHI >= t.
inline DiagnosticStats diagnostic_stats(std::span<const double> est, std::span<const double> truth,
                                        std::span<const double> thresholds) {
  if (est.size() != truth.size()) throw InvalidArgument("diagnostic_stats: unpaired AHI vectors");
  if (est.empty()) throw InvalidArgument("diagnostic_stats: empty input");
  DiagnosticStats out;
  for (double t : thresholds) {
    ThresholdStats s;
    s.threshold = t;
    std::vector<int> p, q;
    for (std::size_t i = 0; i < est.size(); ++i) {
      const bool e = est[i] >= t, g = truth[i] >= t;
      s.tp += e && g;
      s.fp += e && !g;
      s.tn += !e && !g;
      s.fn += !e && g;
      p.push_back(e);
      q.push_back(g);
    }
    if (s.tp + s.fn) s.se = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn);
    if (s.tn + s.fp) s.sp = static_cast<double>(s.tn) / static_cast<double>(s.tn + s.fp);
    s.acc = static_cast<double>(s.tp + s.tn) / static_cast<double>(est.size());
    s.kappa = cohens_kappa(p, q);
    out.thresholds.push_back(s);
  }
  for (std::size_t i = 0; i < est.size(); ++i)
    ++out.severity_confusion[static_cast<std::size_t>(severity_of(truth[i]))][static_cast<std::size_t>(severity_of(est[i]))];
  return out;
}

inline constexpr std::array<double, 3> kAhiThresholds{5.0, 15.0, 30.0};

}  // namespace rosa::metrics
