#pragma once

// Brute-force references shared by the unit tests and the acceptance run. Nothing
// here calls the code it checks, apart from plain data types and the IoU used as
// an input to the NMS fixed-point search.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "rosa/core/rng.hpp"
#include "rosa/core/segments.hpp"
#include "rosa/stage/losses.hpp"

namespace oracle {

using rosa::AnnotatedEvent;
using rosa::DetectedSegment;
using rosa::EventKind;
using rosa::Rng;

// ---------------------------------------------------------------------------
// Linear-chain CRF

inline std::vector<double> random_values(std::size_t n, Rng& rng, double sd = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, sd);
  return v;
}

struct Enumeration {
  double log_z = 0.0;
  std::vector<std::size_t> best;
};

/// All K^N paths scored from scratch; ties keep the first path in lexicographic order.
inline Enumeration enumerate_paths(const std::vector<double>& y, const std::vector<double>& A, std::size_t K) {
  const std::size_t N = y.size() / K;
  std::size_t total = 1;
  for (std::size_t n = 0; n < N; ++n) total *= K;
  std::vector<double> scores;
  std::vector<std::size_t> path(N), best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t n = N; n-- > 0;) {
      path[n] = c % K;
      c /= K;
    }
    double g = 0;
    for (std::size_t n = 0; n < N; ++n) g += y[n * K + path[n]];
    for (std::size_t n = 1; n < N; ++n) g += A[path[n - 1] * K + path[n]];
    scores.push_back(g);
    if (g > best_score) {
      best_score = g;
      best = path;
    }
  }
  double mx = *std::max_element(scores.begin(), scores.end()), s = 0;
  for (double g : scores) s += std::exp(g - mx);
  return {mx + std::log(s), best};
}

/// Plain-double duration loss straight from the recurrence.
inline double duration_loss(const std::vector<double>& y, const rosa::stage::DurationConfig& cfg) {
  const std::size_t K = rosa::kNumStages, N = y.size() / K;
  std::vector<std::vector<double>> p(N, std::vector<double>(K));
  for (std::size_t n = 0; n < N; ++n) {
    double z = 0;
    for (std::size_t i = 0; i < K; ++i) z += std::exp(y[n * K + i]);
    for (std::size_t i = 0; i < K; ++i) p[n][i] = std::exp(y[n * K + i]) / z;
  }
  double total = 0;
  std::vector<double> c(K, 0.0);
  for (std::size_t n = 1; n < N; ++n) {
    for (std::size_t i = 0; i < K; ++i) total += std::max(0.0, cfg.min_duration[i] - c[i]) * (1 - p[n][i]);
    for (std::size_t i = 0; i < K; ++i) {
      const double slot = cfg.printed_recurrence ? c[i] : p[n - 1][i];
      c[i] = p[n - 1][i] * (c[i] + cfg.unit) + (1 - slot) * cfg.unit;
    }
  }
  if (cfg.normalized && N > 1) total /= static_cast<double>(N - 1) * cfg.unit;
  return total;
}

// ---------------------------------------------------------------------------
// Interval IoU and average precision

/// Exact integer-endpoint IoU as a fraction: iou(a) >= iou(b) <=> a.num*b.den >= b.num*a.den.
struct Frac {
  long num, den;
};

inline Frac int_iou(long s1, long e1, long s2, long e2) {
  const long inter = std::max(0L, std::min(e1, e2) - std::max(s1, s2));
  return {inter, (e1 - s1) + (e2 - s2) - inter};
}

/// Greedy matching with exact rational IoU, then
/// AP = (1 / n_truth) * sum over true-positive ranks of max_{j >= rank} precision_j.
inline double average_precision(const std::vector<DetectedSegment>& dets, const std::vector<AnnotatedEvent>& truths,
                                bool same_class) {
  std::vector<std::size_t> idx(dets.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return dets[a].score > dets[b].score; });
  std::vector<bool> used(truths.size(), false), tp;
  for (auto i : idx) {
    const auto& d = dets[i];
    long best = -1;
    Frac bf{0, 1};
    for (std::size_t j = 0; j < truths.size(); ++j) {
      if (used[j] || (same_class && truths[j].kind != d.kind)) continue;
      auto f = int_iou(std::lround(d.t_start), std::lround(d.t_end), std::lround(truths[j].t_start),
                       std::lround(truths[j].t_end));
      if (2 * f.num < f.den) continue;
      if (best < 0 || f.num * bf.den > bf.num * f.den) {
        best = static_cast<long>(j);
        bf = f;
      }
    }
    if (best >= 0) used[static_cast<std::size_t>(best)] = true;
    tp.push_back(best >= 0);
  }
  std::vector<double> prec;
  double hits = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    hits += tp[k];
    prec.push_back(hits / static_cast<double>(k + 1));
  }
  double ap = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    if (!tp[k]) continue;
    ap += *std::max_element(prec.begin() + static_cast<long>(k), prec.end());
  }
  return ap / static_cast<double>(truths.size());
}

struct ApInstance {
  std::vector<DetectedSegment> dets;
  std::vector<AnnotatedEvent> truths;
};

/// Integer endpoints, distinct scores, detections mostly jittered copies of truths.
inline ApInstance random_ap_instance(Rng& rng, std::size_t max_n = 10, bool separated = false) {
  ApInstance in;
  const auto nt = 1 + rng.below(max_n), nd = rng.below(max_n + 1);
  double cursor = 0;
  for (std::size_t i = 0; i < nt; ++i) {
    const double s = separated ? cursor + 1 + static_cast<double>(rng.below(20)) : static_cast<double>(rng.below(200));
    in.truths.push_back({static_cast<EventKind>(rng.below(4)), s, s + 10 + static_cast<double>(rng.below(30))});
    cursor = in.truths.back().t_end;
  }
  std::vector<double> scores;
  for (std::size_t i = 0; i < nd; ++i) scores.push_back((static_cast<double>(i) + 1) / static_cast<double>(nd + 1));
  for (std::size_t i = nd; i > 1; --i) std::swap(scores[i - 1], scores[rng.below(i)]);
  for (std::size_t i = 0; i < nd; ++i) {
    DetectedSegment d;
    d.kind = static_cast<EventKind>(rng.below(4));
    d.score = scores[i];
    if (rng.bernoulli(0.6)) {
      const auto& t = in.truths[rng.below(nt)];
      d.t_start = t.t_start + static_cast<double>(rng.below(9)) - 4;
      d.t_end = t.t_end + static_cast<double>(rng.below(9)) - 4;
      if (rng.bernoulli(0.7)) d.kind = t.kind;
    } else {
      d.t_start = static_cast<double>(rng.below(200));
      d.t_end = d.t_start + 10 + static_cast<double>(rng.below(30));
    }
    in.dets.push_back(d);
  }
  return in;
}

// ---------------------------------------------------------------------------
// Non-maximum suppression

/// Integer endpoints and coarse scores, so ties are common.
inline std::vector<DetectedSegment> random_segments(Rng& rng, std::size_t n) {
  std::vector<DetectedSegment> v;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = std::floor(rng.uniform(0, 60));
    const double w = std::floor(rng.uniform(5, 30));
    v.push_back({static_cast<EventKind>(rng.below(2)), std::floor(rng.uniform(0, 10)) / 10.0, s, s + w});
  }
  return v;
}

/// Fixed-point characterisation: the kept set K is the unique subset of above-threshold
/// segments such that a segment is in K iff no higher-ranked member of K of its class
/// overlaps it at IoU >= thr. Searched over all subsets; nullopt unless exactly one fits.
inline std::optional<std::vector<DetectedSegment>> nms(const std::vector<DetectedSegment>& segs, double thr,
                                                        double score_thr) {
  const std::size_t n = segs.size();
  auto ranks_before = [&](std::size_t a, std::size_t b) {
    if (segs[a].score != segs[b].score) return segs[a].score > segs[b].score;
    if (segs[a].t_start != segs[b].t_start) return segs[a].t_start < segs[b].t_start;
    return a < b;
  };
  std::vector<std::vector<DetectedSegment>> found;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      const bool in = mask >> i & 1u;
      if (segs[i].score < score_thr) {
        ok = !in;
        continue;
      }
      bool blocked = false;
      for (std::size_t j = 0; j < n; ++j)
        if ((mask >> j & 1u) && j != i && ranks_before(j, i) && segs[j].kind == segs[i].kind &&
            rosa::iou(segs[j], segs[i]) >= thr)
          blocked = true;
      ok = in != blocked;
    }
    if (!ok) continue;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1u) idx.push_back(i);
    std::sort(idx.begin(), idx.end(), ranks_before);
    std::vector<DetectedSegment> k;
    for (auto i : idx) k.push_back(segs[i]);
    found.push_back(k);
  }
  if (found.size() != 1) return std::nullopt;
  return found[0];
}

}  // namespace oracle
