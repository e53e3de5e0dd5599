#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "rosa/core/error.hpp"

namespace rosa::metrics {

/// ICC(2,1): two-way random effects, absolute agreement, single rater, from
/// the mean squares of an n subjects x k raters table (row-major).
inline double icc_2_1(std::span<const double> table, std::size_t n, std::size_t k) {
  if (n < 2 || k < 2 || table.size() != n * k) throw InvalidArgument("icc: need an n x k table with n, k >= 2");
  double grand = 0;
  for (double v : table) grand += v;
  grand /= static_cast<double>(n * k);
  double ss_total = 0, ss_rows = 0, ss_cols = 0;
  for (double v : table) ss_total += (v - grand) * (v - grand);
  if (!(ss_total > 0)) throw InvalidArgument("icc: zero total variance");
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0;
    for (std::size_t j = 0; j < k; ++j) m += table[i * k + j];
    m /= static_cast<double>(k);
    ss_rows += static_cast<double>(k) * (m - grand) * (m - grand);
  }
  for (std::size_t j = 0; j < k; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < n; ++i) m += table[i * k + j];
    m /= static_cast<double>(n);
    ss_cols += static_cast<double>(n) * (m - grand) * (m - grand);
  }
  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  const double msr = ss_rows / (dn - 1);
  const double msc = ss_cols / (dk - 1);
  const double mse = (ss_total - ss_rows - ss_cols) / ((dn - 1) * (dk - 1));
  return (msr - mse) / (msr + (dk - 1) * mse + dk * (msc - mse) / dn);
}

inline double icc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("icc: rating vectors differ in length");
  std::vector<double> t;
  t.reserve(2 * x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    t.push_back(x[i]);
    t.push_back(y[i]);
  }
  return icc_2_1(t, x.size(), 2);
}

inline std::optional<double> pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("pearson_r: need paired samples, n >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

/// Cohen's kappa; nullopt when chance agreement is 1 (single class everywhere).
inline std::optional<double> cohens_kappa(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw InvalidArgument("cohens_kappa: label vectors differ in length");
  if (pred.empty()) throw InvalidArgument("cohens_kappa: empty input");
  std::map<int, double> mp, mt;
  double agree = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp[pred[i]] += 1;
    mt[truth[i]] += 1;
    agree += pred[i] == truth[i];
  }
  const double n = static_cast<double>(pred.size());
  const double po = agree / n;
  double pe = 0;
  for (const auto& [label, c] : mp) {
    auto it = mt.find(label);
    if (it != mt.end()) pe += (c / n) * (it->second / n);
  }
  if (pe >= 1.0) return std::nullopt;
  return (po - pe) / (1.0 - pe);
}

struct BlandAltman {
  double mean_diff = 0;
  double sd_diff = 0;
  double loa_low = 0;
  double loa_high = 0;
};

/// Differences x - y; limits are mean +/- 1.96 sample SD.
inline BlandAltman bland_altman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("bland_altman: need paired samples, n >= 2");
  const double n = static_cast<double>(x.size());
  double m = 0;
  for (std::size_t i = 0; i < x.size(); ++i) m += x[i] - y[i];
  m /= n;
  double ss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) ss += (x[i] - y[i] - m) * (x[i] - y[i] - m);
  const double sd = std::sqrt(ss / (n - 1));
  return {m, sd, m - 1.96 * sd, m + 1.96 * sd};
}

}  // namespace rosa::metrics
