#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosa/ad/checkpoint.hpp"
#include "rosa/detect/inference.hpp"
#include "rosa/detect/train.hpp"
#include "rosa/metrics/agreement.hpp"
#include "rosa/metrics/ahi.hpp"
#include "rosa/metrics/detection.hpp"
#include "rosa/oxi/features.hpp"
#include "rosa/oxi/fusion.hpp"
#include "rosa/pipeline/cache.hpp"
#include "rosa/pipeline/config.hpp"
#include "rosa/preproc/dump.hpp"
#include "rosa/preproc/normalize.hpp"
#include "rosa/preproc/range.hpp"
#include "rosa/preproc/spectrogram.hpp"
#include "rosa/stage/train.hpp"
#include "rosa/synth/cohort.hpp"
#include "rosa/synth/container.hpp"
#include "rosa/synth/folds.hpp"
#include "rosa/synth/generate.hpp"

namespace rosa::pipeline {

inline constexpr int kArtifactVersion = 1;

/// A pipeline stage failed; names the stage and, when known, the subject.
class PipelineError : public Error {
 public:
  PipelineError(std::string stage, std::string subject, const std::string& what)
      : Error(stage + (subject.empty() ? "" : " [" + subject + "]") + ": " + what),
        stage_(std::move(stage)),
        subject_(std::move(subject)) {}
  const std::string& stage() const { return stage_; }
  const std::string& subject() const { return subject_; }

 private:
  std::string stage_, subject_;
};

using Progress = std::function<void(const std::string&)>;

/// One night after preprocessing. The raw beat signal is dropped once the stack exists.
struct SubjectData {
  std::string id;
  std::string label_key;  // identifies the recording
  std::string stack_key;  // recording plus preprocessing options
  double duration = 0.0;
  preproc::SpectrogramStack stack;
  std::vector<AnnotatedEvent> events;
  Hypnogram hypnogram;
  SpO2Trace spo2;
  oxi::CleanTrace clean;
};

namespace detail {

inline nlohmann::json labels_json(const SubjectData& s) {
  nlohmann::json ev = nlohmann::json::array();
  for (const auto& e : s.events) ev.push_back({to_string(e.kind), e.t_start, e.t_end});
  std::vector<int> st;
  for (auto x : s.hypnogram.stages) st.push_back(static_cast<int>(x));
  return {{"id", s.id},           {"duration_s", s.duration},  {"events", ev},       {"epoch_len_s", s.hypnogram.epoch_len},
          {"stages", st},         {"spo2_rate", s.spo2.rate}, {"spo2", s.spo2.values}};
}

inline void labels_from(const nlohmann::json& j, SubjectData& s) {
  s.id = j.at("id");
  s.duration = j.at("duration_s");
  s.events.clear();
  for (const auto& e : j.at("events"))
    s.events.push_back({parse_event_kind(e.at(0).get<std::string>()), e.at(1).get<double>(), e.at(2).get<double>()});
  s.hypnogram.epoch_len = j.at("epoch_len_s");
  s.hypnogram.stages.clear();
  for (int x : j.at("stages")) s.hypnogram.stages.push_back(static_cast<Stage>(x));
  s.spo2.rate = j.at("spo2_rate");
  s.spo2.values = j.at("spo2").get<std::vector<std::uint8_t>>();
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  out << j.dump(2) << '\n';
  if (!out) throw Error("cannot write " + p.string());
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read " + p.string());
  return nlohmann::json::parse(in);
}

inline std::string file_key(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
      h *= 0x100000001b3ULL;
    }
  }
  return hex64(h);
}

inline nlohmann::json stack_options_json(const PipelineConfig& c) { return to_json(c).at("stack"); }

/// The cohort block of the config with the run seed folded in; the subject count is
/// left out because subject i does not depend on it.
inline nlohmann::json cohort_json(const PipelineConfig& c) {
  auto j = to_json(c).at("cohort");
  j.erase("subjects");
  j["seed"] = c.seed;
  return j;
}

inline void finish_subject(SubjectData& s) { s.clean = oxi::clean_trace(s.spo2); }

}  // namespace detail

/// Cache key of generated subject i: the cohort options and the seed.
inline std::string generated_subject_key(const PipelineConfig& cfg, std::size_t i) {
  return content_key({{"kind", "subject"}, {"v", kArtifactVersion}, {"cohort", detail::cohort_json(cfg)}, {"index", i}});
}

inline std::string file_subject_key(const std::filesystem::path& p) {
  return content_key({{"kind", "file"}, {"v", kArtifactVersion}, {"content", detail::file_key(p)}});
}

inline std::string stack_key(const PipelineConfig& cfg, const std::string& subject_key) {
  return content_key({{"kind", "stack"}, {"subject", subject_key}, {"options", detail::stack_options_json(cfg)}});
}

/// Subjects in cohort order, either generated from the config or read one file at a
/// time from `cohort_dir`. Stacks and labels come from the cache when present.
inline std::vector<SubjectData> prepare_subjects(const PipelineConfig& cfg, const ArtifactCache& cache,
                                                 const Progress& progress = {}) {
  std::vector<std::filesystem::path> files;
  std::size_t n = cfg.cohort.subjects;
  if (!cfg.cohort_dir.empty()) {
    for (const auto& e : std::filesystem::directory_iterator(cfg.cohort_dir))
      if (e.path().extension() == synth::kCohortExtension) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    n = files.size();
  }
  if (n == 0) throw PipelineError("generate", "", "empty cohort");
  synth::CohortOptions copt = cfg.cohort;
  copt.seed = cfg.seed;
  const auto sev_of = [](std::size_t i) { return static_cast<synth::Severity>(i % 4); };
  std::vector<SubjectData> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = out[i];
    const std::string name = files.empty() ? "subject " + std::to_string(i) : files[i].filename().string();
    try {
      s.label_key = files.empty() ? generated_subject_key(cfg, i) : file_subject_key(files[i]);
    } catch (const std::exception& e) {
      throw PipelineError("load", name, e.what());
    }
    s.stack_key = stack_key(cfg, s.label_key);
    if (cache.has("labels", s.label_key) && cache.has("stack", s.stack_key)) {
      try {
        detail::labels_from(detail::read_json(cache.prefix("labels", s.label_key).string() + ".json"), s);
        s.stack = preproc::load_stack(cache.prefix("stack", s.stack_key));
        detail::finish_subject(s);
        if (progress) progress("cached " + s.id);
        continue;
      } catch (const std::exception&) {
        // fall through and rebuild a damaged entry
      }
    }
    synth::SubjectRecord rec;
    try {
      rec = files.empty() ? synth::generate_subject(synth::make_overnight_profile(copt, i, sev_of(i)))
                          : synth::load_subject(files[i]);
    } catch (const std::exception& e) {
      throw PipelineError(files.empty() ? "generate" : "load", name, e.what());
    }
    s.id = rec.id;
    s.duration = rec.duration;
    s.events = std::move(rec.truth_events);
    s.hypnogram = std::move(rec.truth_hypnogram);
    s.spo2 = std::move(rec.spo2);
    try {
      const auto R = preproc::range_transform(rec.beat, rec.config);
      rec.beat = {};
      s.stack = preproc::compute_spectrogram_stack(R, cfg.stack);
    } catch (const std::exception& e) {
      throw PipelineError("preprocess", s.id, e.what());
    }
    detail::finish_subject(s);
    if (cache.enabled()) {
      detail::write_json(cache.prefix("labels", s.label_key).string() + ".json", detail::labels_json(s));
      cache.commit("labels", s.label_key);
      preproc::dump_stack(cache.prefix("stack", s.stack_key), s.stack);
      cache.commit("stack", s.stack_key);
    }
    if (progress) progress("prepared " + s.id);
  }
  return out;
}

struct FoldSplit {
  std::vector<std::size_t> train;  // fit + val
  std::vector<std::size_t> fit;    // detector and fusion training
  std::vector<std::size_t> val;    // checkpoint selection and tuning
  std::vector<std::size_t> test;
};

/// k-fold partition, then a seeded draw of validation subjects out of each training
/// set. At least one fit subject always remains.
inline std::vector<FoldSplit> make_splits(std::size_t n, const PipelineConfig& cfg) {
  std::vector<FoldSplit> out;
  const auto folds = synth::kfold_split(n, cfg.folds, Rng::mix(cfg.seed, 11));
  for (std::size_t k = 0; k < folds.size(); ++k) {
    FoldSplit f;
    f.train = folds[k].train;
    f.test = folds[k].test;
    std::sort(f.train.begin(), f.train.end());
    std::sort(f.test.begin(), f.test.end());
    auto pool = f.train;
    Rng rng(Rng::mix(cfg.seed, 500 + k));
    rng.shuffle(pool);
    const std::size_t nv = f.train.size() > 1 ? std::min(cfg.val_subjects, f.train.size() - 1) : 0;
    f.val.assign(pool.begin(), pool.begin() + static_cast<long>(nv));
    std::sort(f.val.begin(), f.val.end());
    for (auto i : f.train)
      if (!std::binary_search(f.val.begin(), f.val.end(), i)) f.fit.push_back(i);
    out.push_back(std::move(f));
  }
  return out;
}

struct StagingScore {
  double accuracy = 0.0;
  std::optional<double> kappa;
  std::size_t epochs = 0;
};

inline constexpr std::array<stage::Granularity, 3> kGranularities{stage::Granularity::WS, stage::Granularity::WRLD,
                                                                  stage::Granularity::WRNN};

/// Labels of both hypnograms over their common length.
inline std::pair<std::vector<int>, std::vector<int>> paired_labels(const Hypnogram& pred, const Hypnogram& truth,
                                                                   stage::Granularity g) {
  auto p = stage::map_hypnogram(pred, g), t = stage::map_hypnogram(truth, g);
  const auto n = std::min(p.size(), t.size());
  p.resize(n);
  t.resize(n);
  return {p, t};
}

inline StagingScore staging_score(const std::vector<int>& pred, const std::vector<int>& truth) {
  StagingScore s;
  s.epochs = pred.size();
  if (pred.empty()) return s;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  s.accuracy = static_cast<double>(hit) / static_cast<double>(pred.size());
  s.kappa = metrics::cohens_kappa(pred, truth);
  return s;
}

struct SubjectOutcome {
  std::size_t index = 0;
  std::size_t fold = 0;
  std::vector<DetectedSegment> radar;  // detector output after NMS
  std::vector<oxi::FusedSegment> fused;
  Hypnogram predicted;
  metrics::AhiReport truth;
  std::optional<metrics::AhiReport> estimated;  // fused detections, predicted hypnogram
  std::optional<metrics::AhiReport> radar_only;
  std::optional<double> odi3;
  double tst_truth = 0.0, tst_estimated = 0.0;
  std::array<StagingScore, 3> staging;  // WS, WRLD, WRNN
};

struct FoldOutcome {
  FoldSplit split;
  preproc::NormStats norm;
  detect::DetectorModel detector;
  stage::StagerModel stager;
  oxi::FusionNet fusion;
  std::vector<double> detector_val_ap;
  int detector_best_epoch = -1;
  oxi::FusionDataset fusion_data;
  double omega = 0.5;
  std::vector<std::pair<double, std::optional<double>>> omega_val_ap;  // grid value, val AP
  double count_threshold = 0.5;
  double radar_count_threshold = 0.5;
  std::vector<std::string> checkpoint_files;  // relative to outdir
};

struct RunResult {
  nlohmann::json config;
  std::vector<std::string> ids;
  std::vector<metrics::Severity> truth_severity;
  std::vector<std::vector<AnnotatedEvent>> truth_events;
  std::vector<Hypnogram> truth_hypnograms;
  std::vector<oxi::CleanTrace> clean;  // SpO2 after artifact masking, per subject
  std::vector<FoldOutcome> folds;
  std::vector<SubjectOutcome> subjects;  // test outcomes, in subject order
  std::vector<double> sweep_omegas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::optional<double>> sweep_ap;  // pooled test AP per sweep ω
  std::optional<std::string> failure;  // set when a stage failed; earlier folds are kept
  std::string failed_stage, failed_subject;
  bool complete() const { return !failure.has_value(); }
};

/// Score threshold from `grid` minimizing the summed squared AHI error. Subjects with
/// no predicted sleep are skipped. Ties go to the value closest to 0.5, then the lower.
struct CountCase {
  const std::vector<DetectedSegment>* dets = nullptr;
  const Hypnogram* hypnogram = nullptr;
  double truth_ahi = 0.0;
};

inline std::vector<DetectedSegment> above(const std::vector<DetectedSegment>& d, double thr) {
  std::vector<DetectedSegment> out;
  for (const auto& x : d)
    if (x.score >= thr) out.push_back(x);
  return out;
}

inline double tune_count_threshold(const std::vector<CountCase>& cases, const std::vector<double>& grid,
                                   double fallback) {
  double best = fallback, best_err = std::numeric_limits<double>::infinity();
  for (double t : grid) {
    double err = 0;
    std::size_t used = 0;
    for (const auto& c : cases) {
      if (!(metrics::total_sleep_hours(*c.hypnogram) > 0)) continue;
      const auto kept = above(*c.dets, t);
      const double a = metrics::ahi_and_severity(std::span<const DetectedSegment>(kept), *c.hypnogram).ahi;
      err += (a - c.truth_ahi) * (a - c.truth_ahi);
      ++used;
    }
    if (used == 0) return fallback;
    const bool better = err < best_err || (err == best_err && (std::abs(t - 0.5) < std::abs(best - 0.5) ||
                                                               (std::abs(t - 0.5) == std::abs(best - 0.5) && t < best)));
    if (better) {
      best = t;
      best_err = err;
    }
  }
  return best;
}

namespace detail {

inline nlohmann::json history_json(const std::vector<double>& v) { return v; }

inline void save_model(const ArtifactCache& cache, std::string_view kind, const std::string& key,
                       const ad::ParameterList& params, const nlohmann::json& sidecar) {
  if (!cache.enabled()) return;
  const auto prefix = cache.prefix(kind, key);
  ad::save_checkpoint(prefix, params);
  write_json(prefix.string() + ".train.json", sidecar);
  cache.commit(kind, key);
}

inline std::optional<nlohmann::json> load_model(const ArtifactCache& cache, std::string_view kind,
                                                const std::string& key, ad::ParameterList& params) {
  if (!cache.has(kind, key)) return std::nullopt;
  try {
    const auto prefix = cache.prefix(kind, key);
    ad::load_checkpoint(prefix, params);
    return read_json(prefix.string() + ".train.json");
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline std::vector<std::string> keys_of(const std::vector<SubjectData>& s, bool stacks) {
  std::vector<std::string> out;
  for (const auto& x : s) out.push_back(stacks ? x.stack_key : x.label_key);
  return out;
}

inline std::vector<std::string> pick(const std::vector<std::string>& keys, const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  for (auto i : idx) out.push_back(keys[i]);
  return out;
}

inline double tie_break_pick(const std::vector<std::pair<double, std::optional<double>>>& scored, double fallback) {
  double best = fallback;
  std::optional<double> best_ap;
  for (const auto& [w, ap] : scored) {
    if (!ap) continue;
    const bool better = !best_ap || *ap > *best_ap ||
                        (*ap == *best_ap && (std::abs(w - 0.5) < std::abs(best - 0.5) ||
                                             (std::abs(w - 0.5) == std::abs(best - 0.5) && w < best)));
    if (better) {
      best = w;
      best_ap = ap;
    }
  }
  return best;
}

}  // namespace detail

/// Cache keys and seeds of one fold's trained artifacts. Each key covers the config
/// sections and the subject keys the artifact is built from, and nothing from the
/// test subjects.
struct FoldKeys {
  std::string norm, detector, stager, fusion;
  std::uint64_t detector_seed = 0, stager_seed = 0, fusion_seed = 0, fusion_data_seed = 0;
};

inline FoldKeys make_fold_keys(const PipelineConfig& cfg, const std::vector<std::string>& label_keys,
                               const std::vector<std::string>& stack_keys, const FoldSplit& sp, std::size_t k) {
  using detail::pick;
  const auto full = to_json(cfg);
  FoldKeys f;
  f.detector_seed = Rng::mix(cfg.seed, 100 + k);
  f.stager_seed = Rng::mix(cfg.seed, 200 + k);
  f.fusion_seed = Rng::mix(cfg.seed, 300 + k);
  f.fusion_data_seed = Rng::mix(cfg.seed, 400 + k);
  f.norm = content_key({{"kind", "norm"}, {"train", pick(stack_keys, sp.train)}});
  f.detector = content_key({{"kind", "detector"}, {"v", kArtifactVersion}, {"norm", f.norm},
                            {"fit", pick(stack_keys, sp.fit)}, {"fit_labels", pick(label_keys, sp.fit)},
                            {"val", pick(stack_keys, sp.val)}, {"val_labels", pick(label_keys, sp.val)},
                            {"config", full.at("detector")}, {"train", full.at("detector_train")},
                            {"seed", f.detector_seed}});
  f.stager = content_key({{"kind", "stager"}, {"v", kArtifactVersion}, {"norm", f.norm},
                          {"train", pick(stack_keys, sp.train)}, {"labels", pick(label_keys, sp.train)},
                          {"config", full.at("stager")}, {"train_config", full.at("stager_train")},
                          {"seed", f.stager_seed}});
  f.fusion = content_key({{"kind", "fusion"}, {"v", kArtifactVersion}, {"fit", pick(label_keys, sp.fit)},
                          {"data", full.at("fusion_data")}, {"train", full.at("fusion_train")},
                          {"seed", f.fusion_seed}, {"data_seed", f.fusion_data_seed}});
  return f;
}

/// Trains the three networks of one fold and tunes ω and the counting thresholds.
/// `normed` holds every subject normalized with this fold's training statistics.
inline void train_fold(const PipelineConfig& cfg, const ArtifactCache& cache, const std::vector<SubjectData>& subjects,
                       const std::vector<preproc::SpectrogramStack>& normed, std::size_t k, FoldOutcome& fo,
                       const Progress& progress) {
  const auto& sp = fo.split;
  const auto keys = make_fold_keys(cfg, detail::keys_of(subjects, false), detail::keys_of(subjects, true), sp, k);

  // Detector: fit nights train, val nights pick the checkpoint.
  auto dtc = cfg.detector_train;
  dtc.base.seed = keys.detector_seed;
  fo.detector = detect::DetectorModel(cfg.detector, Rng::mix(dtc.base.seed, 1));
  if (auto side = detail::load_model(cache, "detector", keys.detector, fo.detector.parameters())) {
    fo.detector_val_ap = side->at("val_ap").get<std::vector<double>>();
    fo.detector_best_epoch = side->at("best_epoch");
    if (progress) progress("fold " + std::to_string(k) + ": detector from cache");
  } else {
    std::vector<detect::LabeledNight> fit, val;
    for (auto i : sp.fit) fit.push_back({&normed[i], subjects[i].events});
    for (auto i : sp.val) val.push_back({&normed[i], subjects[i].events});
    detect::DetectorTrainResult r;
    try {
      r = detect::train_detector(fit, val, cfg.detector, dtc, [&](int e, double l) {
        if (progress && (e + 1) % 10 == 0)
          progress("fold " + std::to_string(k) + ": detector epoch " + std::to_string(e + 1) + " loss " + std::to_string(l));
      });
    } catch (const std::exception& e) {
      throw PipelineError("train-detector", "fold " + std::to_string(k), e.what());
    }
    if (r.diverged) throw PipelineError("train-detector", "fold " + std::to_string(k), "non-finite loss");
    fo.detector = std::move(r.model);
    fo.detector_val_ap = r.val_ap;
    fo.detector_best_epoch = r.best_epoch;
    detail::save_model(cache, "detector", keys.detector, fo.detector.parameters(),
                       {{"epoch_loss", r.epoch_loss}, {"val_ap", r.val_ap}, {"best_epoch", r.best_epoch},
                        {"skipped_steps", r.skipped_steps}});
  }

  // Stager: every training night.
  auto stc = cfg.stager_train;
  stc.stage1.seed = keys.stager_seed;
  fo.stager = stage::StagerModel(cfg.stager, Rng::mix(stc.stage1.seed, 1));
  if (detail::load_model(cache, "stager", keys.stager, fo.stager.parameters())) {
    if (progress) progress("fold " + std::to_string(k) + ": stager from cache");
  } else {
    std::vector<stage::StagedNight> nights;
    for (auto i : sp.train) nights.push_back({&normed[i], &subjects[i].hypnogram});
    stage::StagerTrainResult r;
    try {
      r = stage::two_stage_train(nights, cfg.stager, stc);
    } catch (const std::exception& e) {
      throw PipelineError("train-stager", "fold " + std::to_string(k), e.what());
    }
    if (r.diverged) throw PipelineError("train-stager", "fold " + std::to_string(k), "non-finite loss");
    fo.stager = std::move(r.model);
    detail::save_model(cache, "stager", keys.stager, fo.stager.parameters(),
                       {{"epoch_loss", r.epoch_loss}, {"skipped_steps", r.skipped_steps}});
  }

  // Fusion network: labelled SpO2 windows of the fit nights.
  auto ftc = cfg.fusion_train;
  ftc.base.seed = keys.fusion_seed;
  std::vector<oxi::FusionNight> fnights;
  for (auto i : sp.fit) fnights.push_back({&subjects[i].clean, subjects[i].events, &subjects[i].hypnogram});
  try {
    fo.fusion_data = oxi::build_fusion_dataset(fnights, keys.fusion_data_seed, cfg.fusion_data);
  } catch (const std::exception& e) {
    throw PipelineError("fusion-dataset", "fold " + std::to_string(k), e.what());
  }
  fo.fusion = oxi::FusionNet(ftc.hidden, Rng::mix(ftc.base.seed, 3));
  if (auto side = detail::load_model(cache, "fusion", keys.fusion, fo.fusion.parameters())) {
    fo.fusion.mean() = side->at("mean");
    fo.fusion.scale() = side->at("scale");
    fo.fusion.mark_trained();
  } else {
    try {
      fo.fusion = oxi::train_fusion(fo.fusion_data, ftc);
    } catch (const std::exception& e) {
      throw PipelineError("train-fusion", "fold " + std::to_string(k), e.what());
    }
    detail::save_model(cache, "fusion", keys.fusion, fo.fusion.parameters(),
                       {{"mean", fo.fusion.mean()}, {"scale", fo.fusion.scale()}});
  }

  // Tuning on held-out training subjects (fit subjects when there are none).
  const auto& tune_idx = sp.val.empty() ? sp.fit : sp.val;
  struct Tuned {
    std::vector<DetectedSegment> radar;
    Hypnogram hyp;
    double truth_ahi;
  };
  std::vector<Tuned> tuned;
  for (auto i : tune_idx) {
    Tuned t;
    try {
      t.radar = detect::detect_events(fo.detector, normed[i]);
      t.hyp = stage::predict_hypnogram(fo.stager, normed[i]).hypnogram;
      t.truth_ahi = metrics::ahi_and_severity(std::span<const AnnotatedEvent>(subjects[i].events), subjects[i].hypnogram).ahi;
    } catch (const std::exception& e) {
      throw PipelineError("tune", subjects[i].id, e.what());
    }
    tuned.push_back(std::move(t));
  }
  oxi::FusionOptions fopt{cfg.omega, cfg.detector.nms, cfg.fusion_data.features};
  fo.omega = cfg.omega;
  fo.omega_val_ap.clear();
  if (cfg.tune_omega) {
    for (double w : cfg.omega_grid) {
      fopt.omega = w;
      std::vector<metrics::EvalSet> sets;
      for (std::size_t j = 0; j < tuned.size(); ++j) {
        const auto f = oxi::soft_fuse(tuned[j].radar, subjects[tune_idx[j]].clean, fo.fusion, fopt);
        sets.push_back({oxi::segments_of(f), subjects[tune_idx[j]].events});
      }
      fo.omega_val_ap.emplace_back(w, metrics::overall_average_precision(sets));
    }
    fo.omega = detail::tie_break_pick(fo.omega_val_ap, cfg.omega);
  }
  fopt.omega = fo.omega;
  std::vector<std::vector<DetectedSegment>> fused(tuned.size());
  std::vector<CountCase> fused_cases, radar_cases;
  for (std::size_t j = 0; j < tuned.size(); ++j) {
    fused[j] = oxi::segments_of(oxi::soft_fuse(tuned[j].radar, subjects[tune_idx[j]].clean, fo.fusion, fopt));
    fused_cases.push_back({&fused[j], &tuned[j].hyp, tuned[j].truth_ahi});
    radar_cases.push_back({&tuned[j].radar, &tuned[j].hyp, tuned[j].truth_ahi});
  }
  fo.count_threshold = cfg.count_threshold;
  fo.radar_count_threshold = cfg.count_threshold;
  if (cfg.tune_count_threshold) {
    fo.count_threshold = tune_count_threshold(fused_cases, cfg.count_grid, cfg.count_threshold);
    fo.radar_count_threshold = tune_count_threshold(radar_cases, cfg.count_grid, cfg.count_threshold);
  }
}

/// Detection, fusion, staging and AHI for one test subject.
inline SubjectOutcome infer_subject(const FoldOutcome& fo, const PipelineConfig& cfg, const SubjectData& s,
                                    const preproc::SpectrogramStack& normed, std::size_t index, std::size_t fold) {
  SubjectOutcome o;
  o.index = index;
  o.fold = fold;
  try {
    o.radar = detect::detect_events(fo.detector, normed);
  } catch (const std::exception& e) {
    throw PipelineError("detect", s.id, e.what());
  }
  try {
    o.fused = oxi::soft_fuse(o.radar, s.clean, fo.fusion, {fo.omega, cfg.detector.nms, cfg.fusion_data.features});
  } catch (const std::exception& e) {
    throw PipelineError("fuse", s.id, e.what());
  }
  try {
    o.predicted = stage::predict_hypnogram(fo.stager, normed).hypnogram;
  } catch (const std::exception& e) {
    throw PipelineError("stage", s.id, e.what());
  }
  try {
    o.truth = metrics::ahi_and_severity(std::span<const AnnotatedEvent>(s.events), s.hypnogram);
  } catch (const std::exception& e) {
    throw PipelineError("evaluate", s.id, e.what());
  }
  o.tst_truth = metrics::total_sleep_hours(s.hypnogram);
  o.tst_estimated = metrics::total_sleep_hours(o.predicted);
  if (o.tst_estimated > 0) {
    const auto counted = above(oxi::segments_of(o.fused), fo.count_threshold);
    o.estimated = metrics::ahi_and_severity(std::span<const DetectedSegment>(counted), o.predicted);
    const auto radar_counted = above(o.radar, fo.radar_count_threshold);
    o.radar_only = metrics::ahi_and_severity(std::span<const DetectedSegment>(radar_counted), o.predicted);
    o.odi3 = oxi::odi(s.clean, o.tst_estimated, cfg.fusion_data.features.od_threshold);
  }
  for (std::size_t g = 0; g < kGranularities.size(); ++g) {
    const auto [p, t] = paired_labels(o.predicted, s.hypnogram, kGranularities[g]);
    o.staging[g] = staging_score(p, t);
  }
  return o;
}

namespace detail {

inline std::vector<std::string> write_fold_checkpoints(const PipelineConfig& cfg, std::size_t k, const FoldOutcome& fo) {
  const auto rel = std::filesystem::path("checkpoints") / ("fold_" + std::to_string(k));
  std::filesystem::create_directories(cfg.outdir / rel);
  ad::save_checkpoint(cfg.outdir / rel / "detector", fo.detector.parameters());
  ad::save_checkpoint(cfg.outdir / rel / "stager", fo.stager.parameters());
  ad::save_checkpoint(cfg.outdir / rel / "fusion", fo.fusion.parameters());
  auto fusion = fo.fusion;
  write_json(cfg.outdir / rel / "fusion_standardization.json", {{"mean", fusion.mean()}, {"scale", fusion.scale()}});
  write_json(cfg.outdir / rel / "norm.json", fo.norm.to_json());
  std::vector<std::string> files;
  for (const char* f : {"detector.bin", "detector.json", "stager.bin", "stager.json", "fusion.bin", "fusion.json",
                        "fusion_standardization.json", "norm.json"})
    files.push_back((rel / f).generic_string());
  return files;
}

}  // namespace detail

/// Runs every fold in order, then pools the test outcomes. A stage failure stops the
/// run and is recorded on the result together with the folds finished so far.
inline RunResult run_pipeline(const PipelineConfig& cfg, const Progress& progress = {}) {
  cfg.validate();
  RunResult res;
  res.config = to_json(cfg);
  ArtifactCache cache(cfg.cache_path(), cfg.use_cache);
  std::filesystem::create_directories(cfg.outdir);
  try {
    const auto subjects = prepare_subjects(cfg, cache, progress);
    if (subjects.size() < cfg.folds) throw PipelineError("split", "", "fewer subjects than folds");
    for (const auto& s : subjects) {
      res.ids.push_back(s.id);
      res.truth_severity.push_back(
          metrics::ahi_and_severity(std::span<const AnnotatedEvent>(s.events), s.hypnogram).severity);
      res.truth_events.push_back(s.events);
      res.truth_hypnograms.push_back(s.hypnogram);
      res.clean.push_back(s.clean);
    }
    const auto splits = make_splits(subjects.size(), cfg);
    for (std::size_t k = 0; k < splits.size(); ++k) {
      FoldOutcome fo;
      fo.split = splits[k];
      std::vector<const preproc::SpectrogramStack*> train_stacks;
      for (auto i : fo.split.train) train_stacks.push_back(&subjects[i].stack);
      fo.norm = preproc::fit_norm_stats(train_stacks);
      std::vector<preproc::SpectrogramStack> normed(subjects.size());
      for (std::size_t i = 0; i < subjects.size(); ++i) normed[i] = preproc::normalize_stack(subjects[i].stack, fo.norm);
      if (progress) progress("fold " + std::to_string(k) + ": training");
      train_fold(cfg, cache, subjects, normed, k, fo, progress);
      for (auto i : fo.split.test) res.subjects.push_back(infer_subject(fo, cfg, subjects[i], normed[i], i, k));
      fo.checkpoint_files = detail::write_fold_checkpoints(cfg, k, fo);
      res.folds.push_back(std::move(fo));
      if (progress) progress("fold " + std::to_string(k) + ": done");
    }
    std::sort(res.subjects.begin(), res.subjects.end(),
              [](const SubjectOutcome& a, const SubjectOutcome& b) { return a.index < b.index; });
    for (double w : res.sweep_omegas) {
      std::vector<metrics::EvalSet> sets;
      for (const auto& o : res.subjects) {
        const auto& fo = res.folds[o.fold];
        const auto f = oxi::soft_fuse(o.radar, subjects[o.index].clean, fo.fusion, {w, cfg.detector.nms, cfg.fusion_data.features});
        sets.push_back({oxi::segments_of(f), subjects[o.index].events});
      }
      res.sweep_ap.push_back(metrics::overall_average_precision(sets));
    }
  } catch (const PipelineError& e) {
    res.failure = e.what();
    res.failed_stage = e.stage();
    res.failed_subject = e.subject();
  }
  return res;
}

}  // namespace rosa::pipeline
