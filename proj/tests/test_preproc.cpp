#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "rosa/preproc/dump.hpp"
#include "rosa/preproc/normalize.hpp"
#include "rosa/preproc/range.hpp"
#include "rosa/preproc/spectrogram.hpp"
#include "rosa/synth/generate.hpp"

using namespace rosa;
using namespace rosa::preproc;
using synth::RadarConfig;

namespace {

constexpr double kPi = std::numbers::pi;

// Direct O(n^2) windowed DFT of one chirp.
std::vector<std::complex<double>> dense_dft(std::span<const std::complex<float>> x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n / 2);
  for (std::size_t r = 0; r < n / 2; ++r)
    for (std::size_t k = 0; k < n; ++k) {
      const double w = 0.5 - 0.5 * std::cos(2 * kPi * k / n);
      out[r] += std::complex<double>(x[k]) * w * std::polar(1.0, -2 * kPi * double(r * k % n) / n);
    }
  return out;
}

synth::BeatSignalCube static_targets(const RadarConfig& c, std::vector<double> ranges, std::size_t chirps = 4) {
  synth::BeatSignalCube sum;
  for (double r0 : ranges) {
    auto cube = synth::render_beat_signal(c, r0, std::vector<double>(chirps, 0.0), {}, {1.0, 20.0, true, 0});
    if (sum.samples.empty()) {
      sum = cube;
    } else {
      for (std::size_t i = 0; i < sum.samples.size(); ++i) sum.samples[i] += cube.samples[i];
    }
  }
  return sum;
}

std::size_t peak_bin(const RangeTimeMatrix& R, std::size_t t) {
  std::size_t best = 0;
  for (std::size_t r = 1; r < R.bins; ++r)
    if (std::abs(R.at(r, t)) > std::abs(R.at(best, t))) best = r;
  return best;
}

// Steady-state gain of the zero-phase filter for a real sinusoid at f, measured
// on the middle half of the output.
double probe_gain(const SosFilter& f, double freq, double fs, double seconds) {
  const auto n = static_cast<std::size_t>(seconds * fs);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2 * kPi * freq * i / fs);
  const auto y = filtfilt(f, x, default_padding(std::min(freq, 1.0), fs));
  double px = 0, py = 0;
  for (std::size_t i = n / 4; i < 3 * n / 4; ++i) {
    px += x[i] * x[i];
    py += y[i] * y[i];
  }
  return std::sqrt(py / px);
}

// -3 dB crossing between lo and hi by bisection on the measured gain.
double find_edge(const SosFilter& f, double lo, double hi, double fs, double seconds, bool rising) {
  const double target = 1.0 / std::numbers::sqrt2;
  for (int it = 0; it < 30; ++it) {
    const double mid = std::sqrt(lo * hi);
    const bool above = probe_gain(f, mid, fs, seconds) > target;
    if (above == rising) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return std::sqrt(lo * hi);
}

synth::SubjectProfile breathing_profile(double rate, double amp, double duration, RadarConfig cfg) {
  synth::SubjectProfile p;
  p.duration = duration;
  p.radar = cfg;
  p.bed_range = 0.8;
  p.breathing_rate = rate;
  p.breathing_amplitude = amp;
  p.render.noise_free = true;
  return p;
}

}  // namespace

TEST(RangeTransform, StaticTargetPeakAndDenseOracle) {
  RadarConfig c;
  auto cube = static_targets(c, {0.8});
  auto R = range_transform(cube, c);
  EXPECT_EQ(R.bins, 128u);
  EXPECT_DOUBLE_EQ(R.range_resolution, 0.05);
  EXPECT_EQ(peak_bin(R, 0), 16u);
  const auto ref = dense_dft(cube.chirp(2));
  double scale = 0;
  for (auto v : ref) scale = std::max(scale, std::abs(v));
  for (std::size_t r = 0; r < R.bins; ++r) EXPECT_NEAR(std::abs(R.at(r, 2) - ref[r]), 0.0, 1e-9 * scale);
}

TEST(RangeTransform, ZeroInputGivesZero) {
  RadarConfig c;
  synth::BeatSignalCube cube{c.n, 3, std::vector<std::complex<float>>(c.n * 3)};
  auto R = range_transform(cube, c);
  for (auto v : R.values) EXPECT_EQ(v, std::complex<double>(0, 0));
}

TEST(RangeTransform, TwoTargetsResolve) {
  RadarConfig c;
  auto R = range_transform(static_targets(c, {0.6, 1.1}), c);
  std::vector<double> mag(R.bins);
  for (std::size_t r = 0; r < R.bins; ++r) mag[r] = std::abs(R.at(r, 0));
  // local maxima at 12 and 22, with a clear dip in between
  EXPECT_GT(mag[12], mag[11]);
  EXPECT_GT(mag[12], mag[13]);
  EXPECT_GT(mag[22], mag[21]);
  EXPECT_GT(mag[22], mag[23]);
  EXPECT_LT(mag[17], 0.01 * mag[12]);
}

TEST(RangeTransform, Linearity) {
  RadarConfig c;
  auto a = static_targets(c, {0.7}, 3);
  auto b = synth::render_beat_signal(c, 1.3, std::vector<double>(3, 1e-3), {}, {0.5, 10.0, false, 9});
  synth::BeatSignalCube ab = a;
  for (std::size_t i = 0; i < ab.samples.size(); ++i) ab.samples[i] = a.samples[i] + b.samples[i];
  auto Ra = range_transform(a, c), Rb = range_transform(b, c), Rab = range_transform(ab, c);
  for (std::size_t i = 0; i < Rab.values.size(); ++i) {
    // float storage of the summed cube bounds the achievable agreement
    const auto sum = Ra.values[i] + Rb.values[i];
    EXPECT_LE(std::abs(Rab.values[i] - sum), 1e-6 * std::max(1.0, std::abs(sum)));
  }
  // exact in double for inputs that are exactly representable sums
  synth::BeatSignalCube twice = a;
  for (auto& v : twice.samples) v *= 2.0f;
  auto R2 = range_transform(twice, c);
  for (std::size_t i = 0; i < R2.values.size(); ++i)
    EXPECT_LE(std::abs(R2.values[i] - 2.0 * Ra.values[i]), 1e-9 * std::max(1.0, std::abs(R2.values[i])));
}

TEST(RangeTransform, RejectsNonFinite) {
  RadarConfig c;
  auto cube = static_targets(c, {0.8}, 2);
  cube.samples[5] = {std::nanf(""), 0.0f};
  EXPECT_THROW(range_transform(cube, c), NumericError);
}

TEST(Filters, SweptSineEdgesWithinTenPercent) {
  for (double fs : {20.0, 250.0}) {
    StackOptions opt;
    auto f = make_band_filters(opt, fs);
    const double hp = find_edge(f.movement, 1.0, 9.0, fs, 120, true);
    EXPECT_NEAR(hp, 5.0, 0.5) << "fs=" << fs;
    const double lo = find_edge(f.breathing, 0.02, 0.5, fs, 1200, true);
    EXPECT_NEAR(lo, 0.1, 0.01) << "fs=" << fs;
    const double hi = find_edge(f.breathing, 1.0, 9.0, fs, 120, false);
    EXPECT_NEAR(hi, 5.0, 0.5) << "fs=" << fs;
  }
}

TEST(Filters, ForwardBackwardResponseIsThreeDbAtCutoff) {
  for (auto type : {FilterType::Lowpass, FilterType::Highpass}) {
    auto f = butterworth(type, 4, 3.0, 40.0);
    EXPECT_NEAR(std::norm(f.response(3.0, 40.0)), 1.0 / std::numbers::sqrt2, 1e-12);
  }
  auto single = butterworth(FilterType::Lowpass, 4, 3.0, 40.0, false);
  EXPECT_NEAR(std::abs(single.response(3.0, 40.0)), 1.0 / std::numbers::sqrt2, 1e-12);
}

TEST(Filters, RejectBadDesign) {
  EXPECT_THROW(butterworth(FilterType::Lowpass, 3, 1.0, 10.0), InvalidArgument);
  EXPECT_THROW(butterworth(FilterType::Lowpass, 4, 6.0, 10.0), InvalidArgument);
}

TEST(Filters, ZeroPhaseKeepsPulseCentre) {
  const double fs = 20;
  std::vector<double> x(2000, 0.0);
  for (int i = -40; i <= 40; ++i) x[1000 + i] = std::exp(-0.5 * (i / 15.0) * (i / 15.0));
  auto y = filtfilt(butterworth(FilterType::Lowpass, 4, 1.0, fs), x, 200);
  EXPECT_EQ(std::max_element(y.begin(), y.end()) - y.begin(), 1000);
}

TEST(Stack, PureBreathingAtTargetBin) {
  for (auto cfg : {RadarConfig{}, RadarConfig::overnight()}) {
    auto rec = synth::generate_subject(breathing_profile(0.3, 0.5e-3, 120, cfg));
    auto S = compute_spectrogram_stack(range_transform(rec.beat, cfg));
    EXPECT_EQ(S.bin_lo, 6u);
    EXPECT_EQ(S.bins, std::min<std::size_t>(25, cfg.n / 2 - 6));
    EXPECT_EQ(S.frames, 120u);
    const std::size_t target = 16 - S.bin_lo;
    const std::size_t nfft = std::bit_ceil(static_cast<std::size_t>(30 * cfg.F));
    const double df = cfg.F / nfft;
    for (std::size_t k = 15; k < 105; ++k) {
      std::size_t best = 0;
      for (std::size_t r = 1; r < S.bins; ++r)
        if (S.at(Channel::BreathPower, r, k) > S.at(Channel::BreathPower, best, k)) best = r;
      ASSERT_EQ(best, target);
      EXPECT_LT(S.at(Channel::Movement, target, k), 1e-6 * S.at(Channel::BreathPower, target, k));
      EXPECT_NEAR(S.at(Channel::Doppler, target, k), 0.3, df);
    }
  }
}

TEST(Stack, VibrationBurstRaisesMovementPower) {
  RadarConfig cfg;
  auto p = breathing_profile(0.25, 0.5e-3, 120, cfg);
  auto rec = synth::generate_subject(p);
  std::vector<double> vib(rec.displacement.size(), 0.0);
  for (std::size_t i = 60 * 250; i < 70 * 250; ++i) vib[i] = 0.2e-3 * std::sin(2 * kPi * 20.0 * i / 250.0);
  auto cube = synth::render_beat_signal(cfg, 0.8, rec.displacement, vib, {1.0, 20.0, true, 0});
  auto base = compute_spectrogram_stack(range_transform(rec.beat, cfg));
  auto S = compute_spectrogram_stack(range_transform(cube, cfg));
  const std::size_t t = 16 - S.bin_lo;
  EXPECT_GT(S.at(Channel::Movement, t, 65), 1e3 * base.at(Channel::Movement, t, 65) + 1e-3);
  EXPECT_LT(S.at(Channel::Movement, t, 20), 1e-6 * S.at(Channel::Movement, t, 65));
  // far from the burst the breathing channel is untouched
  EXPECT_NEAR(S.at(Channel::BreathPower, t, 20), base.at(Channel::BreathPower, t, 20),
              1e-4 * base.at(Channel::BreathPower, t, 20));
}

TEST(Stack, CentralApneaDropsBreathingPowerAndDoppler) {
  auto cfg = RadarConfig::overnight();
  auto p = breathing_profile(0.25, 2e-3, 600, cfg);
  p.event_plan = {{EventKind::CA, 120, 20}, {EventKind::CA, 250, 25}, {EventKind::CA, 400, 30}, {EventKind::CA, 500, 45}};
  auto rec = synth::generate_subject(p);
  auto S = compute_spectrogram_stack(range_transform(rec.beat, cfg));
  const std::size_t t = 16 - S.bin_lo;
  for (const auto& e : rec.truth_events) {
    auto mean = [&](Channel c, double a, double b) {
      double s = 0;
      int n = 0;
      for (std::size_t k = 0; k < S.frames; ++k)
        if (S.frame_time(k) >= a && S.frame_time(k) < b) {
          s += S.at(c, t, k);
          ++n;
        }
      return s / n;
    };
    const double in_b = mean(Channel::BreathPower, e.t_start, e.t_end);
    const double before_b = mean(Channel::BreathPower, e.t_start - 60, e.t_start - 30);
    EXPECT_LT(in_b, 0.25 * before_b) << e.t_start;
    const double in_d = mean(Channel::Doppler, e.t_start + e.duration() / 3, e.t_end - e.duration() / 3);
    const double before_d = mean(Channel::Doppler, e.t_start - 60, e.t_start - 30);
    EXPECT_LT(in_d, 0.5 * before_d) << e.t_start;
  }
}

TEST(Stack, ChannelsShareShapeAndShortFramesFlag) {
  auto cfg = RadarConfig::overnight();
  auto rec = synth::generate_subject(breathing_profile(0.25, 1e-3, 90, cfg));
  StackOptions opt;
  opt.frame_len = 10;
  auto S = compute_spectrogram_stack(range_transform(rec.beat, cfg), opt);
  EXPECT_TRUE(S.doppler_unreliable);
  EXPECT_EQ(S.values.size(), 3 * S.bins * S.frames);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(S.channel(static_cast<Channel>(c)).size(), S.bins * S.frames);
  for (double v : S.channel(Channel::Doppler)) {
    EXPECT_GE(v, -cfg.F / 2);
    EXPECT_LE(v, cfg.F / 2);
  }
  for (double v : S.channel(Channel::Movement)) EXPECT_GE(v, 0.0);
  EXPECT_FALSE(compute_spectrogram_stack(range_transform(rec.beat, cfg)).doppler_unreliable);
}

TEST(Stack, RejectsLowSlowRate) {
  RangeTimeMatrix R{4, 100, 0.05, 8.0, std::vector<std::complex<double>>(400)};
  EXPECT_THROW(compute_spectrogram_stack(R), InvalidArgument);
}

TEST(Doppler, EstimatorsOnSyntheticSpectrum) {
  const std::size_t n = 64;
  std::vector<std::complex<double>> spec(n);
  spec[4] = 2.0;       // +1.25 Hz at fs = 20
  spec[n - 4] = 1.0;   // -1.25 Hz folds onto it
  spec[8] = 2.0;       // 2.5 Hz
  EXPECT_DOUBLE_EQ(doppler_frequency(spec, 20.0, 0.1, 5.0, DopplerEstimator::Argmax), 1.25);
  EXPECT_NEAR(doppler_frequency(spec, 20.0, 0.1, 5.0, DopplerEstimator::FirstMoment), (5 * 1.25 + 4 * 2.5) / 9, 1e-12);
  std::vector<std::complex<double>> zero(n);
  EXPECT_EQ(doppler_frequency(zero, 20.0, 0.1, 5.0, DopplerEstimator::Argmax), 0.0);
}

namespace {

SpectrogramStack random_stack(std::uint64_t seed, std::size_t bins = 5, std::size_t frames = 40) {
  Rng rng(seed);
  SpectrogramStack s;
  s.bins = bins;
  s.frames = frames;
  s.slow_rate = 20;
  s.values.resize(3 * bins * frames);
  for (double& v : s.channel(Channel::Movement)) v = std::exp(rng.normal(-3, 2));
  for (double& v : s.channel(Channel::BreathPower)) v = std::exp(rng.normal(1, 1));
  for (double& v : s.channel(Channel::Doppler)) v = rng.uniform(0.1, 5);
  return s;
}

}  // namespace

TEST(Normalize, TrainingChannelsStandardized) {
  auto a = random_stack(1), b = random_stack(2);
  auto stats = fit_norm_stats({&a, &b});
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, ss = 0, n = 0;
    for (const auto* st : {&a, &b}) {
      auto z = normalize_stack(*st, stats);
      for (double v : z.channel(static_cast<Channel>(c))) {
        s += v;
        ss += v * v;
        n += 1;
      }
    }
    EXPECT_NEAR(s / n, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(ss / n - (s / n) * (s / n)), 1.0, 1e-6);
  }
  auto z = normalize_stack(a, stats);
  for (double v : z.channel(Channel::Doppler)) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Normalize, ConstantChannelFallsBackToZeros) {
  auto a = random_stack(3);
  for (double& v : a.channel(Channel::Movement)) v = 4.0;
  auto stats = fit_norm_stats({&a});
  EXPECT_TRUE(stats.zero_variance[0]);
  EXPECT_FALSE(stats.zero_variance[1]);
  EXPECT_EQ(stats.sd[0], 1.0);
  for (double v : normalize_stack(a, stats).channel(Channel::Movement)) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Normalize, FrozenStatsAreIdempotent) {
  auto train = random_stack(4), test = random_stack(5);
  const auto stats = fit_norm_stats({&train});
  auto once = normalize_stack(test, stats);
  auto again = normalize_stack(test, stats);
  EXPECT_EQ(once.values, again.values);
  auto through_identity = normalize_stack(once, NormStats::identity());
  EXPECT_EQ(through_identity.values, once.values);
  auto round = NormStats::from_json(stats.to_json());
  EXPECT_EQ(normalize_stack(test, round).values, once.values);
}

TEST(Dump, RoundTrip) {
  auto s = random_stack(6, 3, 7);
  s.bin_lo = 6;
  s.bin_hi = 9;
  const auto dir = std::filesystem::temp_directory_path() / "rosa_dump_test";
  std::filesystem::create_directories(dir);
  dump_stack(dir / "s", s);
  auto back = load_stack(dir / "s");
  EXPECT_EQ(back.values, s.values);
  EXPECT_EQ(back.bins, 3u);
  EXPECT_EQ(back.bin_lo, 6u);
  std::filesystem::remove_all(dir);
}
