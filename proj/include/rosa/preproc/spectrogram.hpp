#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "rosa/preproc/fft.hpp"
#include "rosa/preproc/filter.hpp"
#include "rosa/preproc/range.hpp"

namespace rosa::preproc {

enum class Channel : std::size_t { Movement = 0, BreathPower = 1, Doppler = 2 };
inline constexpr std::size_t kChannels = 3;

/// [x_M, x_B, x_D] x range bins x frames, channel-major then bin-major.
struct SpectrogramStack {
  std::size_t bins = 0;
  std::size_t frames = 0;
  double frame_hop = 1.0;  // s
  double frame_len = 30.0; // s, doppler frames
  double power_frame_len = 5.0;   // s, x_M / x_B frames
  double slow_rate = 0.0;  // Hz
  std::size_t bin_lo = 0;  // first kept range bin of the source matrix
  std::size_t bin_hi = 0;  // one past the last
  bool doppler_unreliable = false;
  std::vector<double> values;

  std::size_t index(Channel c, std::size_t r, std::size_t k) const {
    return (static_cast<std::size_t>(c) * bins + r) * frames + k;
  }
  double at(Channel c, std::size_t r, std::size_t k) const { return values[index(c, r, k)]; }
  double& at(Channel c, std::size_t r, std::size_t k) { return values[index(c, r, k)]; }
  std::span<const double> channel(Channel c) const {
    return {values.data() + static_cast<std::size_t>(c) * bins * frames, bins * frames};
  }
  std::span<double> channel(Channel c) { return {values.data() + static_cast<std::size_t>(c) * bins * frames, bins * frames}; }
  /// Centre time of frame k.
  double frame_time(std::size_t k) const { return (static_cast<double>(k) + 0.5) * frame_hop; }
};

enum class DopplerEstimator { Argmax, FirstMoment };

struct StackOptions {
  double frame_len = 30.0;        // doppler (x_D) frame
  double power_frame_len = 5.0;  // x_M / x_B frame; power needs no spectral resolution
  double frame_hop = 1.0;
  double range_lo = 0.3;  // m
  double range_hi = 1.5;  // m
  double movement_cutoff = 5.0;
  double band_lo = 0.1;
  double band_hi = 5.0;
  int order = 4;
  DopplerEstimator doppler = DopplerEstimator::Argmax;
};

inline constexpr double kMinReliableFrame = 20.0;  // two periods of the 0.1 Hz band edge

struct BandFilters {
  SosFilter movement;
  SosFilter breathing;
};

inline BandFilters make_band_filters(const StackOptions& opt, double fs) {
  return {butterworth(FilterType::Highpass, opt.order, opt.movement_cutoff, fs),
          butterworth(FilterType::Highpass, opt.order, opt.band_lo, fs)
              .then(butterworth(FilterType::Lowpass, opt.order, opt.band_hi, fs))};
}

/// Frequency of the strongest component in [lo, hi] Hz of one frame, folding
/// +f and -f together so the estimate is a non-negative rate.
inline double doppler_frequency(std::span<const std::complex<double>> spectrum, double fs, double lo, double hi,
                                DopplerEstimator est) {
  const std::size_t nfft = spectrum.size();
  const double df = fs / static_cast<double>(nfft);
  const auto k_lo = static_cast<std::size_t>(std::ceil(lo / df - 1e-9));
  const auto k_hi = std::min(nfft / 2, static_cast<std::size_t>(std::floor(hi / df + 1e-9)));
  double best = -1.0, best_f = 0.0, total = 0.0, moment = 0.0;
  for (std::size_t k = std::max<std::size_t>(k_lo, 1); k <= k_hi; ++k) {
    const double p = std::norm(spectrum[k]) + (k < nfft - k ? std::norm(spectrum[nfft - k]) : 0.0);
    total += p;
    moment += p * k * df;
    if (p > best) {
      best = p;
      best_f = k * df;
    }
  }
  if (total <= 0.0) return 0.0;
  return est == DopplerEstimator::Argmax ? best_f : moment / total;
}

/// Gated range bins -> high-passed framed power (x_M), band-passed framed power
/// (x_B) and dominant band-passed frequency (x_D), all on one frame grid.
inline SpectrogramStack compute_spectrogram_stack(const RangeTimeMatrix& R, const StackOptions& opt = {}) {
  const double fs = R.slow_rate;
  if (!(fs > 2.0 * opt.band_hi)) {
    throw InvalidArgument("compute_spectrogram_stack: slow rate " + std::to_string(fs) + " Hz must exceed " +
                          std::to_string(2.0 * opt.band_hi) + " Hz");
  }
  if (!(opt.frame_len > 0 && opt.frame_hop > 0 && opt.power_frame_len > 0)) throw InvalidArgument("compute_spectrogram_stack: bad frame grid");
  SpectrogramStack S;
  S.frame_hop = opt.frame_hop;
  S.frame_len = opt.frame_len;
  S.power_frame_len = opt.power_frame_len;
  S.slow_rate = fs;
  S.doppler_unreliable = opt.frame_len < kMinReliableFrame;
  S.bin_lo = std::min(R.bins, static_cast<std::size_t>(std::ceil(opt.range_lo / R.range_resolution - 1e-9)));
  S.bin_hi = std::min(R.bins, static_cast<std::size_t>(std::floor(opt.range_hi / R.range_resolution + 1e-9)) + 1);
  if (S.bin_hi <= S.bin_lo) throw InvalidArgument("compute_spectrogram_stack: empty range window");
  S.bins = S.bin_hi - S.bin_lo;
  const double duration = static_cast<double>(R.steps) / fs;
  S.frames = static_cast<std::size_t>(std::floor(duration / opt.frame_hop + 1e-9));
  S.values.assign(kChannels * S.bins * S.frames, 0.0);
  if (S.frames == 0) return S;

  const auto flt = make_band_filters(opt, fs);
  const std::size_t pad = default_padding(opt.band_lo, fs);
  const auto L = static_cast<std::size_t>(std::lround(opt.frame_len * fs));
  const auto Lp = static_cast<std::size_t>(std::lround(opt.power_frame_len * fs));
  const auto win = hann(L);
  const auto pwin = hann(Lp);
  const std::size_t nfft = std::bit_ceil(L);
  FftPlan plan(nfft);
  auto buf = plan.data();
  std::vector<double> pm(R.steps), pb(R.steps);
  const auto steps = static_cast<long>(R.steps);

  for (std::size_t r = 0; r < S.bins; ++r) {
    const auto src = R.bin(S.bin_lo + r);
    const auto hp = filtfilt(flt.movement, src, pad);
    const auto bp = filtfilt(flt.breathing, src, pad);
    for (std::size_t t = 0; t < R.steps; ++t) {
      pm[t] = std::norm(hp[t]);
      pb[t] = std::norm(bp[t]);
    }
    for (std::size_t k = 0; k < S.frames; ++k) {
      const double centre = S.frame_time(k) * fs;
      // Hann-weighted mean power; samples outside the recording are dropped.
      const auto pfirst = static_cast<long>(std::lround(centre - 0.5 * static_cast<double>(Lp)));
      double wsum = 0, m = 0, b = 0;
      for (std::size_t j = 0; j < Lp; ++j) {
        const long t = pfirst + static_cast<long>(j);
        if (t < 0 || t >= steps) continue;
        wsum += pwin[j];
        m += pwin[j] * pm[static_cast<std::size_t>(t)];
        b += pwin[j] * pb[static_cast<std::size_t>(t)];
      }
      S.at(Channel::Movement, r, k) = wsum > 0 ? m / wsum : 0.0;
      S.at(Channel::BreathPower, r, k) = wsum > 0 ? b / wsum : 0.0;

      const auto first = static_cast<long>(std::lround(centre - 0.5 * static_cast<double>(L)));
      std::fill(buf.begin(), buf.end(), std::complex<double>{});
      for (std::size_t j = 0; j < L; ++j) {
        const long t = first + static_cast<long>(j);
        if (t >= 0 && t < steps) buf[j] = bp[static_cast<std::size_t>(t)] * win[j];
      }
      plan.execute();
      S.at(Channel::Doppler, r, k) = doppler_frequency(buf, fs, opt.band_lo, opt.band_hi, opt.doppler);
    }
  }
  return S;
}

}  // namespace rosa::preproc
