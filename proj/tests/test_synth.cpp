#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <gtest/gtest.h>

#include "rosa/synth/cohort.hpp"
#include "rosa/synth/container.hpp"
#include "rosa/synth/folds.hpp"
#include "rosa/synth/generate.hpp"

using namespace rosa;
using namespace rosa::synth;

namespace {

constexpr double kPi = std::numbers::pi;

SubjectProfile quiet_profile(double duration = 600.0) {
  SubjectProfile p;
  p.id = "quiet";
  p.seed = 7;
  p.duration = duration;
  p.radar = RadarConfig::make(60e9, 3e9, 128e-6, 20.0, 64);
  p.render.noise_free = true;
  return p;
}

// Single-bin DFT of one chirp, written independently of the preprocessing code.
std::complex<double> dft_bin(std::span<const std::complex<float>> x, double bin) {
  std::complex<double> acc = 0;
  for (std::size_t k = 0; k < x.size(); ++k)
    acc += std::complex<double>(x[k]) * std::polar(1.0, -2 * kPi * bin * k / x.size());
  return acc;
}

std::vector<double> unwrap(std::vector<double> ph) {
  for (std::size_t i = 1; i < ph.size(); ++i) {
    while (ph[i] - ph[i - 1] > kPi) ph[i] -= 2 * kPi;
    while (ph[i] - ph[i - 1] < -kPi) ph[i] += 2 * kPi;
  }
  return ph;
}

std::filesystem::path scratch(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("rosa_synth_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

std::vector<unsigned char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(RadarConfig, DefaultsAndDerivedFields) {
  RadarConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.f0, 60e9);
  EXPECT_EQ(c.B, 3e9);
  EXPECT_EQ(c.F, 250.0);
  EXPECT_EQ(c.n, 256u);
  EXPECT_DOUBLE_EQ(c.lambda0, 5e-3);
  EXPECT_DOUBLE_EQ(c.range_resolution(), 0.05);
  EXPECT_EQ(c.range_bins(), 128u);
}

TEST(RadarConfig, RejectsBadParameters) {
  EXPECT_THROW(RadarConfig::make(60e9, 3e9, 128e-6, 250, 100), InvalidArgument);
  EXPECT_THROW(RadarConfig::make(60e9, 3e9, 128e-6, 1e5, 256), InvalidArgument);
  RadarConfig c;
  c.K *= 2;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Generate, NoEventsGivesPureSinusoid) {
  auto p = quiet_profile();
  auto rec = generate_subject(p);
  EXPECT_TRUE(rec.truth_events.empty());
  ASSERT_EQ(rec.displacement.size(), 600u * 20u);
  // A sampled sinusoid satisfies d[i+1] + d[i-1] = 2 cos(w) d[i].
  const double w = 2 * kPi * p.breathing_rate / p.radar.F;
  for (std::size_t i = 1; i + 1 < rec.displacement.size(); ++i) {
    const auto& d = rec.displacement;
    ASSERT_NEAR(d[i + 1] + d[i - 1], 2 * std::cos(w) * d[i], 1e-12);
  }
  double peak = 0;
  for (double v : rec.displacement) peak = std::max(peak, std::abs(v));
  EXPECT_NEAR(peak, p.breathing_amplitude, 1e-3 * p.breathing_amplitude);
  for (double m : rec.movement) EXPECT_EQ(m, 0.0);
}

TEST(Generate, PlanPassthrough) {
  auto p = quiet_profile();
  p.event_plan = {{EventKind::OA, 100, 30}};
  auto rec = generate_subject(p);
  ASSERT_EQ(rec.truth_events.size(), 1u);
  EXPECT_EQ(rec.truth_events[0], (AnnotatedEvent{EventKind::OA, 100, 130}));
  EXPECT_EQ(rec.truth_hypnogram.size(), 20u);
}

TEST(Generate, EventEnvelopesFollowKind) {
  auto p = quiet_profile(900);
  p.event_plan = {{EventKind::CA, 100, 30}, {EventKind::OA, 250, 30}, {EventKind::HP, 400, 30}, {EventKind::MA, 550, 40}};
  auto rec = generate_subject(p);
  auto peak = [&](double a, double b) {
    double m = 0;
    for (auto i = static_cast<std::size_t>(a * 20); i < static_cast<std::size_t>(b * 20); ++i)
      m = std::max(m, std::abs(rec.displacement[i]));
    return m / p.breathing_amplitude;
  };
  EXPECT_LE(peak(104, 126), 0.05 + 1e-9);
  EXPECT_LE(peak(254, 276), 0.4 + 1e-9);
  EXPECT_GE(peak(254, 276), 0.2 - 1e-9);
  EXPECT_LE(peak(404, 426), 0.7 + 1e-9);
  EXPECT_GE(peak(404, 426), 0.25);
  EXPECT_LE(peak(554, 568), 0.05 + 1e-9);  // central half of a mixed apnea
  EXPECT_GE(peak(574, 586), 0.15);
  EXPECT_GT(peak(700, 800), 0.99);
}

TEST(Generate, Determinism) {
  auto p = quiet_profile(300);
  p.render.noise_free = false;
  p.stage_dynamics = true;
  p.event_plan = {{EventKind::HP, 60, 20}};
  p.od_coupling = {{4, 12}};
  const auto dir = scratch("det");
  save_subject(dir / "a.rosac", generate_subject(p));
  save_subject(dir / "b.rosac", generate_subject(p));
  EXPECT_EQ(file_bytes(dir / "a.rosac"), file_bytes(dir / "b.rosac"));
  p.seed += 1;
  save_subject(dir / "c.rosac", generate_subject(p));
  EXPECT_NE(file_bytes(dir / "a.rosac"), file_bytes(dir / "c.rosac"));
  std::filesystem::remove_all(dir);
}

TEST(Generate, RejectsInvalidProfiles) {
  auto p = quiet_profile();
  p.event_plan = {{EventKind::OA, 100, 30}, {EventKind::CA, 120, 20}};
  try {
    generate_subject(p);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("overlap"), std::string::npos);
  }
  p.event_plan = {{EventKind::OA, 100, 8}};
  EXPECT_THROW(generate_subject(p), InvalidArgument);
  p.event_plan.clear();
  p.duration = 20;
  EXPECT_THROW(generate_subject(p), InvalidArgument);
  p.duration = 600;
  p.breathing_amplitude = 0.06;
  EXPECT_THROW(generate_subject(p), InvalidArgument);
}

TEST(Render, StaticTargetColumnsIdentical) {
  RadarConfig c;
  std::vector<double> d(50, 0.0);
  auto cube = render_beat_signal(c, 0.8, d, {}, {1.0, 20.0, true, 0});
  for (std::size_t t = 1; t < cube.chirps; ++t)
    for (std::size_t k = 0; k < cube.n; ++k) ASSERT_EQ(cube.chirp(t)[k], cube.chirp(0)[k]);
}

TEST(Render, SlowTimePhaseFollowsDisplacement) {
  RadarConfig c;
  const double A = 0.5e-3;
  std::vector<double> d(2500);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = A * std::sin(2 * kPi * 0.3 * i / c.F);
  auto cube = render_beat_signal(c, 0.8, d, {}, {1.0, 20.0, true, 0});
  std::vector<double> ph;
  for (std::size_t t = 0; t < cube.chirps; ++t) ph.push_back(std::arg(dft_bin(cube.chirp(t), 16)));
  ph = unwrap(ph);
  const double offset = ph[0] - 4 * kPi * d[0] / c.lambda0;
  for (std::size_t t = 0; t < d.size(); ++t) ASSERT_NEAR(ph[t] - offset, 4 * kPi * d[t] / c.lambda0, 1e-6);
}

TEST(Render, QuarterWavelengthStepIsHalfTurn) {
  RadarConfig c;
  std::vector<double> d{0.0, c.lambda0 / 4};
  EXPECT_DOUBLE_EQ(c.lambda0 / 4, 1.25e-3);
  auto cube = render_beat_signal(c, 0.8, d, {}, {1.0, 20.0, true, 0});
  const double step = std::arg(dft_bin(cube.chirp(1), 16) / dft_bin(cube.chirp(0), 16));
  EXPECT_NEAR(std::abs(step), kPi, 1e-6);
}

TEST(Render, NoisePowerMatchesSnr) {
  RadarConfig c;
  std::vector<double> d(400, 0.0);
  auto clean = render_beat_signal(c, 0.8, d, {}, {2.0, 10.0, true, 0});
  auto noisy = render_beat_signal(c, 0.8, d, {}, {2.0, 10.0, false, 3});
  double pn = 0;
  for (std::size_t i = 0; i < clean.samples.size(); ++i) pn += std::norm(std::complex<double>(noisy.samples[i] - clean.samples[i]));
  pn /= static_cast<double>(clean.samples.size());
  EXPECT_NEAR(10 * std::log10(4.0 / pn), 10.0, 0.1);
}

TEST(Render, RejectsRangeBeyondBins) {
  RadarConfig c = RadarConfig::make(60e9, 3e9, 128e-6, 20.0, 64);
  EXPECT_DOUBLE_EQ(c.max_range(), 1.6);
  std::vector<double> d(4, 0.0);
  EXPECT_THROW(render_beat_signal(c, 1.7, d, {}), InvalidArgument);
  EXPECT_NO_THROW(render_beat_signal(c, 1.5, d, {}));
}

TEST(SpO2, NoEventsIsConstantBaseline) {
  auto p = quiet_profile();
  auto tr = synthesize_spo2(p, {});
  ASSERT_EQ(tr.size(), 600u);
  for (auto v : tr.values) EXPECT_EQ(v, 97);
}

TEST(SpO2, SingleDesaturationDepthAndTiming) {
  auto p = quiet_profile();
  p.spo2_baseline = 97;
  p.event_plan = {{EventKind::OA, 100, 30}};
  p.od_coupling = {{4, 15}};
  auto rec = generate_subject(p);
  const auto& v = rec.spo2.values;
  const auto mn = std::min_element(v.begin(), v.end());
  EXPECT_EQ(*mn, 93);
  EXPECT_GT(static_cast<double>(mn - v.begin()), 130.0 + 15.0);
  for (std::size_t i = 0; i <= 145; ++i) EXPECT_EQ(v[i], 97);
}

TEST(SpO2, ArtifactIsLiteralAndInvalid) {
  auto p = quiet_profile();
  p.artifact_plan = {{50, 255}, {51, 0}};
  auto tr = synthesize_spo2(p, {});
  EXPECT_EQ(tr.values[50], 255);
  EXPECT_FALSE(tr.valid(50));
  EXPECT_FALSE(tr.valid(51));
  EXPECT_TRUE(tr.valid(52));
}

TEST(SpO2, CouplingPropertyAcrossSpacedEvents) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = quiet_profile(1800);
    p.spo2_baseline = 95 + static_cast<int>(rng.below(4));
    for (double s = 60; s + 150 < 1800; s += 150 + std::round(rng.uniform(0, 30))) {
      p.event_plan.push_back({EventKind::OA, s, std::round(rng.uniform(10, 40))});
      p.od_coupling.push_back({3 + static_cast<int>(rng.below(6)), std::round(rng.uniform(10, 30))});
    }
    auto tr = synthesize_spo2(p, truth_from_plan(p.event_plan));
    for (std::size_t e = 0; e < p.event_plan.size(); ++e) {
      const double end = p.event_plan[e].end(), delay = p.od_coupling[e].delay;
      int mn = 255;
      for (auto i = static_cast<std::size_t>(end) + 1; i <= end + delay + 60 && i < tr.size(); ++i) mn = std::min<int>(mn, tr.values[i]);
      EXPECT_EQ(mn, p.spo2_baseline - p.od_coupling[e].depth);
    }
  }
}

TEST(SpO2, UncoupledEventLeavesTraceFlat) {
  auto p = quiet_profile();
  p.event_plan = {{EventKind::CA, 100, 20}};
  p.od_coupling = {{0, 15}};
  auto rec = generate_subject(p);
  for (auto v : rec.spo2.values) EXPECT_EQ(v, 97);
}

TEST(SpO2, FluctuationsAreShortAndShallow) {
  auto p = quiet_profile(3600);
  p.spo2_fluctuations = true;
  auto tr = synthesize_spo2(p, {});
  std::size_t run = 0, runs = 0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    EXPECT_GE(tr.values[i], 96);
    if (tr.values[i] < 97) {
      ++run;
    } else if (run) {
      EXPECT_LT(run, 10u);
      run = 0;
      ++runs;
    }
  }
  EXPECT_GT(runs, 5u);
}

TEST(Container, RoundTripIsExact) {
  auto p = quiet_profile(120);
  p.render.noise_free = false;
  p.event_plan = {{EventKind::MA, 30.25, 17.5}};
  p.od_coupling = {{5, 11}};
  p.artifact_plan = {{3, 0}};
  auto rec = generate_subject(p);
  const auto dir = scratch("rt");
  save_subject(dir / "s.rosac", rec);
  auto back = load_subject(dir / "s.rosac");
  EXPECT_TRUE(same_contents(rec, back));
  EXPECT_TRUE(std::filesystem::exists(dir / "s.rosac.json"));
  std::filesystem::remove_all(dir);
}

TEST(Container, DistinctErrorsForCorruption) {
  auto rec = generate_subject(quiet_profile(60));
  const auto dir = scratch("bad");
  const auto path = dir / "s.rosac";
  save_subject(path, rec);
  const auto good = file_bytes(path);
  auto write = [&](const std::vector<unsigned char>& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  };
  auto code_of = [&] {
    try {
      load_subject(path);
    } catch (const CohortError& e) {
      return e.code();
    }
    return CohortErrorCode::Io;
  };
  auto flipped = good;
  flipped[200] ^= 0x10;
  write(flipped);
  EXPECT_EQ(code_of(), CohortErrorCode::Checksum);

  write(std::vector<unsigned char>(good.begin(), good.begin() + static_cast<long>(good.size() / 2)));
  EXPECT_EQ(code_of(), CohortErrorCode::Truncated);

  auto versioned = good;
  versioned[6] = 9;
  write(versioned);
  EXPECT_EQ(code_of(), CohortErrorCode::VersionMismatch);

  auto magic = good;
  magic[0] = 'X';
  write(magic);
  EXPECT_EQ(code_of(), CohortErrorCode::BadMagic);
  std::filesystem::remove_all(dir);
}

TEST(Folds, FourSubjectsFourFolds) {
  const auto dir = scratch("folds");
  std::vector<SubjectRecord> recs;
  for (int i = 0; i < 4; ++i) {
    auto p = quiet_profile(60);
    p.id = "s" + std::to_string(i);
    p.seed = i;
    recs.push_back(generate_subject(p));
  }
  save_cohort(dir, recs);
  auto loaded = load_cohort(dir);
  ASSERT_EQ(loaded.size(), 4u);
  auto folds = kfold_split(loaded.size(), 4, 1);
  std::vector<int> seen(4, 0);
  for (const auto& f : folds) {
    ASSERT_EQ(f.test.size(), 1u);
    EXPECT_EQ(f.train.size(), 3u);
    ++seen[f.test[0]];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  std::filesystem::remove_all(dir);
}

TEST(Folds, PartitionProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(30), k = 2 + rng.below(n - 1);
    auto folds = kfold_split(n, k, trial);
    std::vector<int> tested(n, 0);
    for (const auto& f : folds) {
      EXPECT_EQ(f.train.size() + f.test.size(), n);
      EXPECT_LE(f.test.size(), n / k + 1);
      for (auto i : f.test) ++tested[i];
      for (auto i : f.train) EXPECT_FALSE(std::binary_search(f.test.begin(), f.test.end(), i));
    }
    for (int t : tested) EXPECT_EQ(t, 1);
  }
  EXPECT_THROW(kfold_split(3, 4, 0), InvalidArgument);
}

TEST(Cohort, HypnogramCoversNightWithCycles) {
  Rng rng(3);
  auto h = generate_hypnogram(8 * 3600, rng);
  EXPECT_EQ(h.size(), 960u);
  EXPECT_EQ(h.stages.front(), Stage::W);
  EXPECT_EQ(h.stages.back(), Stage::W);
  std::array<int, 5> count{};
  for (auto s : h.stages) ++count[static_cast<int>(s)];
  for (int c : count) EXPECT_GT(c, 0);
  EXPECT_GT(sleep_hours(h), 6.0);
}

TEST(Cohort, ProfilesAreValidAndEventsSitInSleep) {
  CohortOptions opt;
  opt.subjects = 4;
  for (const auto& p : make_cohort_profiles(opt)) {
    EXPECT_NO_THROW(p.validate());
    EXPECT_EQ(p.od_coupling.size(), p.event_plan.size());
    for (std::size_t i = 0; i < p.event_plan.size(); ++i) {
      const auto& e = p.event_plan[i];
      EXPECT_NE(p.stage_plan.at(e.start), Stage::W);
      EXPECT_NE(p.stage_plan.at(e.end()), Stage::W);
      if (i) {
        EXPECT_GE(e.start - p.event_plan[i - 1].end(), opt.min_gap);
      }
    }
  }
  // severities cycle: the fourth subject is severe
  auto profiles = make_cohort_profiles(opt);
  const double ahi3 = profiles[3].event_plan.size() / sleep_hours(profiles[3].stage_plan);
  const double ahi0 = profiles[0].event_plan.size() / sleep_hours(profiles[0].stage_plan);
  EXPECT_GE(ahi3, 30.0);
  EXPECT_LT(ahi0, 5.0);
}
