#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "rosa/core/error.hpp"

namespace rosa::preproc {

/// Biquad in transposed direct form II, a0 normalized to 1.
struct Biquad {
  std::array<double, 3> b{};
  std::array<double, 2> a{};  // a1, a2

  double dc_gain() const { return (b[0] + b[1] + b[2]) / (1.0 + a[0] + a[1]); }
  std::complex<double> response(double f, double fs) const {
    const auto z1 = std::polar(1.0, -2 * std::numbers::pi * f / fs);
    return (b[0] + b[1] * z1 + b[2] * z1 * z1) / (1.0 + a[0] * z1 + a[1] * z1 * z1);
  }
};

enum class FilterType { Lowpass, Highpass };

struct SosFilter {
  std::vector<Biquad> sections;

  std::complex<double> response(double f, double fs) const {
    std::complex<double> h = 1.0;
    for (const auto& s : sections) h *= s.response(f, fs);
    return h;
  }
  SosFilter then(const SosFilter& o) const {
    SosFilter r = *this;
    r.sections.insert(r.sections.end(), o.sections.begin(), o.sections.end());
    return r;
  }
};

/// Even-order digital Butterworth via the bilinear transform with prewarping.
/// With `zero_phase_cutoff` the single-pass edge is moved so that the
/// forward-backward response is -3 dB at `cutoff` instead of -6 dB.
inline SosFilter butterworth(FilterType type, int order, double cutoff, double fs, bool zero_phase_cutoff = true) {
  if (order < 2 || order % 2) throw InvalidArgument("butterworth: order must be even and >= 2");
  if (!(cutoff > 0 && cutoff < fs / 2)) {
    throw InvalidArgument("butterworth: cutoff " + std::to_string(cutoff) + " Hz outside (0, " + std::to_string(fs / 2) + ")");
  }
  double k = std::tan(std::numbers::pi * cutoff / fs);
  if (zero_phase_cutoff) {
    const double x = std::pow(std::numbers::sqrt2 - 1.0, 1.0 / (2.0 * order));
    k = type == FilterType::Lowpass ? k / x : k * x;
  }
  SosFilter f;
  for (int i = 0; i < order / 2; ++i) {
    // Pole pair angle of the normalized analog prototype.
    const double theta = std::numbers::pi * (2.0 * i + 1.0) / (2.0 * order);
    const double q = 2.0 * std::sin(theta);
    const double a0 = 1.0 + q * k + k * k;
    Biquad s;
    s.a = {2.0 * (k * k - 1.0) / a0, (1.0 - q * k + k * k) / a0};
    if (type == FilterType::Lowpass) {
      s.b = {k * k / a0, 2.0 * k * k / a0, k * k / a0};
    } else {
      s.b = {1.0 / a0, -2.0 / a0, 1.0 / a0};
    }
    f.sections.push_back(s);
  }
  return f;
}

/// Runs the cascade over x in place. `x0` seeds every section at the steady
/// state for a constant input x0, which suppresses start-up transients.
inline void sosfilt(const SosFilter& f, std::span<double> x, double x0 = 0.0) {
  double level = x0;
  for (const auto& s : f.sections) {
    const double y_ss = level * s.dc_gain();
    double z2 = s.b[2] * level - s.a[1] * y_ss;
    double z1 = s.b[1] * level - s.a[0] * y_ss + z2;
    for (double& v : x) {
      const double in = v;
      const double y = s.b[0] * in + z1;
      z1 = s.b[1] * in - s.a[0] * y + z2;
      z2 = s.b[2] * in - s.a[1] * y;
      v = y;
    }
    level = y_ss;
  }
}

/// Zero-phase forward-backward filtering with odd reflection padding of `pad`
/// samples at both ends (clamped to the signal length - 1).
inline std::vector<double> filtfilt(const SosFilter& f, std::span<const double> x, std::size_t pad) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  pad = std::min(pad, n - 1);
  std::vector<double> y(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) {
    y[i] = 2.0 * x[0] - x[pad - i];
    y[n + pad + i] = 2.0 * x[n - 1] - x[n - 2 - i];
  }
  std::copy(x.begin(), x.end(), y.begin() + static_cast<std::ptrdiff_t>(pad));
  sosfilt(f, y, y.front());
  std::reverse(y.begin(), y.end());
  sosfilt(f, y, y.front());
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

/// Complex signals are filtered per component; the filters are real.
inline std::vector<std::complex<double>> filtfilt(const SosFilter& f, std::span<const std::complex<double>> x,
                                                  std::size_t pad) {
  std::vector<double> re(x.size()), im(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    re[i] = x[i].real();
    im[i] = x[i].imag();
  }
  re = filtfilt(f, re, pad);
  im = filtfilt(f, im, pad);
  std::vector<std::complex<double>> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = {re[i], im[i]};
  return out;
}

/// Padding that covers several time constants of the slowest edge.
inline std::size_t default_padding(double lowest_cutoff, double fs) {
  return static_cast<std::size_t>(std::ceil(3.0 * fs / lowest_cutoff));
}

}  // namespace rosa::preproc
