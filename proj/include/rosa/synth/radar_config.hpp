#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <string>

#include "rosa/core/error.hpp"

namespace rosa::synth {

/// FMCW chirp parameters. Build with RadarConfig::make so the derived fields
/// (slope, wavelength) stay consistent.
struct RadarConfig {
  double f0 = 60e9;         // carrier, Hz
  double B = 3e9;           // sweep bandwidth, Hz
  double K = 3e9 / 128e-6;  // chirp slope, Hz/s
  double T_r = 128e-6;      // chirp duration, s
  double F = 250.0;         // chirps per second
  std::uint32_t n = 256;    // samples per chirp
  double c = 3e8;           // m/s
  double lambda0 = 3e8 / 60e9;

  static RadarConfig make(double f0, double B, double T_r, double F, std::uint32_t n, double c = 3e8) {
    RadarConfig r;
    r.f0 = f0;
    r.B = B;
    r.T_r = T_r;
    r.K = B / T_r;
    r.F = F;
    r.n = n;
    r.c = c;
    r.lambda0 = c / f0;
    r.validate();
    return r;
  }

  /// Reduced slow-time rate and chirp length used for full-night cohorts.
  static RadarConfig overnight() { return make(60e9, 3e9, 128e-6, 20.0, 64); }

  double range_resolution() const { return c / (2.0 * B); }
  double fast_sample_rate() const { return n / T_r; }
  /// Largest range whose beat frequency 2KR/c stays below the fast-time
  /// Nyquist rate, i.e. inside the n/2 kept bins.
  double max_range() const { return 0.5 * fast_sample_rate() * c / (2.0 * K); }
  std::size_t range_bins() const { return n / 2; }

  void validate() const {
    auto rel = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::abs(b); };
    if (!(f0 > 0 && B > 0 && T_r > 0 && F > 0 && c > 0)) throw InvalidArgument("RadarConfig: non-positive parameter");
    if (!rel(lambda0, c / f0)) throw InvalidArgument("RadarConfig: lambda0 != c / f0");
    if (!rel(K, B / T_r)) throw InvalidArgument("RadarConfig: K != B / T_r");
    if (F * T_r > 1.0 + 1e-12) throw InvalidArgument("RadarConfig: frame rate exceeds 1 / T_r");
    if (n < 2 || !std::has_single_bit(n)) {
      throw InvalidArgument("RadarConfig: n = " + std::to_string(n) + " must be a power of two >= 2");
    }
  }

  bool operator==(const RadarConfig&) const = default;
};

}  // namespace rosa::synth
