#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "rosa/preproc/fft.hpp"
#include "rosa/synth/radar_config.hpp"
#include "rosa/synth/render.hpp"

namespace rosa::preproc {

/// Range profile over slow time, stored bin-major: bin r is contiguous in t.
struct RangeTimeMatrix {
  std::size_t bins = 0;
  std::size_t steps = 0;
  double range_resolution = 0.0;  // m per bin
  double slow_rate = 0.0;         // Hz
  std::vector<std::complex<double>> values;

  std::span<const std::complex<double>> bin(std::size_t r) const { return {values.data() + r * steps, steps}; }
  std::span<std::complex<double>> bin(std::size_t r) { return {values.data() + r * steps, steps}; }
  std::complex<double> at(std::size_t r, std::size_t t) const { return values[r * steps + t]; }
};

/// Periodic Hann window, w[k] = (1 - cos(2 pi k / n)) / 2.
inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * k / n));
  return w;
}

/// Hann-windowed FFT of every chirp, keeping the n/2 non-negative beat frequencies.
inline RangeTimeMatrix range_transform(const synth::BeatSignalCube& beat, const synth::RadarConfig& cfg) {
  if (beat.n != cfg.n || beat.samples.size() != beat.n * beat.chirps) {
    throw ShapeError("range_transform: cube of " + std::to_string(beat.n) + " x " + std::to_string(beat.chirps) +
                     " does not match config n = " + std::to_string(cfg.n));
  }
  RangeTimeMatrix R;
  R.bins = beat.n / 2;
  R.steps = beat.chirps;
  R.range_resolution = cfg.range_resolution();
  R.slow_rate = cfg.F;
  R.values.resize(R.bins * R.steps);
  const auto w = hann(beat.n);
  FftPlan plan(beat.n);
  auto buf = plan.data();
  for (std::size_t t = 0; t < beat.chirps; ++t) {
    const auto chirp = beat.chirp(t);
    for (std::size_t k = 0; k < beat.n; ++k) {
      const std::complex<double> v(chirp[k]);
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
        throw NumericError("range_transform: non-finite sample at chirp " + std::to_string(t) + ", index " +
                           std::to_string(k));
      }
      buf[k] = v * w[k];
    }
    plan.execute();
    for (std::size_t r = 0; r < R.bins; ++r) R.values[r * R.steps + t] = buf[r];
  }
  return R;
}

}  // namespace rosa::preproc
