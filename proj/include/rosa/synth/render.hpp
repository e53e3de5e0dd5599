#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "rosa/core/error.hpp"
#include "rosa/core/rng.hpp"
#include "rosa/synth/radar_config.hpp"

namespace rosa::synth {

/// Complex beat samples, chirp-major: chirp t occupies [t*n, (t+1)*n).
struct BeatSignalCube {
  std::size_t n = 0;       // fast-time samples per chirp
  std::size_t chirps = 0;  // slow-time length
  std::vector<std::complex<float>> samples;

  std::span<const std::complex<float>> chirp(std::size_t t) const { return {samples.data() + t * n, n}; }
  std::span<std::complex<float>> chirp(std::size_t t) { return {samples.data() + t * n, n}; }
  bool operator==(const BeatSignalCube&) const = default;
};

struct RenderOptions {
  double amplitude = 1.0;  // A_b
  double snr_db = 20.0;
  bool noise_free = false;
  std::uint64_t noise_seed = 0;
};

/// One chirp per entry of `d`. The target sits at R0 + d[t] + movement[t];
/// the range tone uses R0 only, so the slow-time phase at the target bin is
/// exactly 4*pi*(R0 + d + movement)/lambda0 plus a constant.
inline BeatSignalCube render_beat_signal(const RadarConfig& cfg, double R0, std::span<const double> d,
                                         std::span<const double> movement, const RenderOptions& opt = {}) {
  cfg.validate();
  if (!(R0 > 0) || R0 >= cfg.max_range()) {
    throw InvalidArgument("render_beat_signal: R0 = " + std::to_string(R0) + " m outside unambiguous range (0, " +
                          std::to_string(cfg.max_range()) + ")");
  }
  if (!movement.empty() && movement.size() != d.size()) {
    throw ShapeError("render_beat_signal: movement length " + std::to_string(movement.size()) + " != " +
                     std::to_string(d.size()));
  }
  BeatSignalCube cube;
  cube.n = cfg.n;
  cube.chirps = d.size();
  cube.samples.resize(cube.n * cube.chirps);

  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double dtau = cfg.T_r / cfg.n;
  const double fb = 2.0 * cfg.K * R0 / cfg.c;
  std::vector<std::complex<double>> tone(cfg.n);
  for (std::size_t k = 0; k < cfg.n; ++k) tone[k] = std::polar(opt.amplitude, two_pi * fb * dtau * k);

  const double sigma = opt.amplitude / std::sqrt(std::pow(10.0, opt.snr_db / 10.0)) / std::numbers::sqrt2;
  Rng rng(opt.noise_seed);
  for (std::size_t t = 0; t < cube.chirps; ++t) {
    const double disp = d[t] + (movement.empty() ? 0.0 : movement[t]);
    const auto rot = std::polar(1.0, two_pi * 2.0 * (R0 + disp) / cfg.lambda0);
    auto out = cube.chirp(t);
    for (std::size_t k = 0; k < cfg.n; ++k) {
      auto v = tone[k] * rot;
      if (!opt.noise_free) v += std::complex<double>(rng.normal() * sigma, rng.normal() * sigma);
      out[k] = std::complex<float>(static_cast<float>(v.real()), static_cast<float>(v.imag()));
    }
  }
  return cube;
}

}  // namespace rosa::synth
