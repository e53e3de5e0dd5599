#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosa/detect/train.hpp"
#include "rosa/oxi/fusion.hpp"
#include "rosa/preproc/spectrogram.hpp"
#include "rosa/stage/train.hpp"
#include "rosa/synth/cohort.hpp"

namespace rosa::pipeline {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Everything one run depends on. Defaults are sized for a 12-subject, 8 h cohort
/// on a single core.
struct PipelineConfig {
  std::uint64_t seed = 2024;  // drives the cohort and every training run
  std::filesystem::path cohort_dir;  // load .rosac containers from here instead of generating
  synth::CohortOptions cohort;
  preproc::StackOptions stack;
  detect::DetectorConfig detector = [] {
    detect::DetectorConfig c;
    c.widths = {8, 16, 32};
    return c;
  }();
  detect::DetectorTrainConfig detector_train = [] {
    detect::DetectorTrainConfig t;
    t.base = {{1e-3}, {1e-3, 1e-5, 60}, 60, 0};
    t.eval_every = 5;
    return t;
  }();
  stage::StagerConfig stager;
  stage::StagerTrainConfig stager_train = [] {
    stage::StagerTrainConfig t;
    t.window_epochs = 240;
    t.windows_per_night = 2;
    return t;
  }();
  oxi::FusionTrainConfig fusion_train;
  oxi::FusionDatasetOptions fusion_data;
  double omega = 0.5;
  bool tune_omega = true;
  std::vector<double> omega_grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double count_threshold = 0.5;  // fused score from which a detection counts toward AHI
  bool tune_count_threshold = true;
  std::vector<double> count_grid{0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9};
  std::size_t folds = 4;
  std::size_t val_subjects = 2;  // per fold, held out of detector and fusion training for tuning
  std::filesystem::path outdir = "rosa_out";
  std::filesystem::path cache_dir;  // empty: <outdir>/cache
  bool use_cache = true;

  std::filesystem::path cache_path() const { return cache_dir.empty() ? outdir / "cache" : cache_dir; }

  void validate() const {
    if (folds < 2) throw ConfigError("config: folds must be >= 2");
    if (cohort_dir.empty()) {
      if (cohort.subjects < folds) throw ConfigError("config: fewer subjects than folds");
      if (!(cohort.duration >= 600)) throw ConfigError("config: cohort duration must be >= 600 s");
    } else if (!std::filesystem::is_directory(cohort_dir)) {
      throw ConfigError("config: cohort_dir does not exist: " + cohort_dir.string());
    }
    if (!(omega >= 0 && omega <= 1)) throw ConfigError("config: omega outside [0, 1]");
    for (double w : omega_grid)
      if (!(w >= 0 && w <= 1)) throw ConfigError("config: omega grid outside [0, 1]");
    if (tune_omega && omega_grid.empty()) throw ConfigError("config: empty omega grid");
    if (tune_count_threshold && count_grid.empty()) throw ConfigError("config: empty count threshold grid");
    if (!(count_threshold >= 0 && count_threshold <= 1)) throw ConfigError("config: count threshold outside [0, 1]");
    try {
      detector.validate();
      stager.validate();
      detector_train.base.validate();
      stager_train.stage1.validate();
      fusion_train.base.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    if (outdir.empty()) throw ConfigError("config: empty outdir");
  }
};

namespace detail {

template <typename T>
void get(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) j.at(key).get_to(field);
}

inline nlohmann::json train_json(const ad::TrainConfig& t) {
  return {{"epochs", t.epochs}, {"lr", t.adam.lr}, {"lr_max", t.schedule.lr_max}, {"lr_min", t.schedule.lr_min},
          {"period", t.schedule.period}};
}

inline void train_from(const nlohmann::json& j, ad::TrainConfig& t) {
  get(j, "epochs", t.epochs);
  get(j, "lr", t.adam.lr);
  get(j, "lr_max", t.schedule.lr_max);
  get(j, "lr_min", t.schedule.lr_min);
  get(j, "period", t.schedule.period);
}

}  // namespace detail

/// Full config as JSON. The cache keys hash slices of this, so every field that can
/// change an artifact appears here.
inline nlohmann::json to_json(const PipelineConfig& c) {
  const auto& co = c.cohort;
  const auto& r = co.radar;
  const auto& s = c.stack;
  const auto& st = c.stager_train;
  return {
      {"seed", c.seed},
      {"cohort_dir", c.cohort_dir.string()},
      {"cohort",
       {{"subjects", co.subjects}, {"duration_s", co.duration}, {"snr_db", co.snr_db}, {"min_gap_s", co.min_gap},
        {"ca_uncoupled", co.ca_uncoupled}, {"other_uncoupled", co.other_uncoupled},
        {"artifact_bursts", co.artifact_bursts}, {"sleep_movement_rate", co.sleep_movement_rate},
        {"radar", {{"f0", r.f0}, {"B", r.B}, {"T_r", r.T_r}, {"F", r.F}, {"n", r.n}}}}},
      {"stack",
       {{"frame_len", s.frame_len}, {"power_frame_len", s.power_frame_len}, {"frame_hop", s.frame_hop},
        {"range_lo", s.range_lo}, {"range_hi", s.range_hi}, {"movement_cutoff", s.movement_cutoff},
        {"band_lo", s.band_lo}, {"band_hi", s.band_hi}, {"order", s.order},
        {"doppler", s.doppler == preproc::DopplerEstimator::Argmax ? "argmax" : "first_moment"}}},
      {"detector", c.detector},
      {"detector_train",
       {{"base", detail::train_json(c.detector_train.base)}, {"crops_per_night", c.detector_train.crops_per_night},
        {"crop_len", c.detector_train.crop_len}, {"event_centred_crops", c.detector_train.event_centred_crops},
        {"eval_every", c.detector_train.eval_every}}},
      {"stager", c.stager},
      {"stager_train",
       {{"stage1", detail::train_json(st.stage1)},
        {"stage2_epochs", st.stage2_epochs},
        {"stage2_lr_max", st.stage2_schedule.lr_max},
        {"stage2_lr_min", st.stage2_schedule.lr_min},
        {"stage2_period", st.stage2_schedule.period},
        {"alpha", st.weights.alpha},
        {"beta", st.weights.beta},
        {"gamma", st.weights.gamma},
        {"eta", st.weights.eta},
        {"min_duration", st.duration.min_duration},
        {"duration_normalized", st.duration.normalized},
        {"duration_unit", st.duration.unit},
        {"printed_recurrence", st.duration.printed_recurrence},
        {"window_epochs", st.window_epochs},
        {"windows_per_night", st.windows_per_night}}},
      {"fusion_train", {{"base", detail::train_json(c.fusion_train.base)}, {"hidden", c.fusion_train.hidden}}},
      {"fusion_data",
       {{"min_event_distance", c.fusion_data.min_event_distance},
        {"pseudo_duration", c.fusion_data.pseudo_duration},
        {"window", c.fusion_data.features.window},
        {"od_threshold", c.fusion_data.features.od_threshold},
        {"min_window", c.fusion_data.features.min_window}}},
      {"omega", c.omega},
      {"tune_omega", c.tune_omega},
      {"omega_grid", c.omega_grid},
      {"count_threshold", c.count_threshold},
      {"tune_count_threshold", c.tune_count_threshold},
      {"count_grid", c.count_grid},
      {"folds", c.folds},
      {"val_subjects", c.val_subjects},
      {"outdir", c.outdir.string()},
      {"cache_dir", c.cache_dir.string()},
      {"use_cache", c.use_cache}};
}

/// Overrides on top of the defaults; absent keys keep their default.
namespace detail {

/// Object keys of `j` that have no counterpart in `known`, as JSON-pointer-like paths.
inline void unknown_keys(const nlohmann::json& j, const nlohmann::json& known, const std::string& path,
                         std::vector<std::string>& out) {
  if (!j.is_object() || !known.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key()))
      out.push_back(path + "/" + it.key());
    else
      unknown_keys(*it, known.at(it.key()), path + "/" + it.key(), out);
  }
}

}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  using detail::get;
  PipelineConfig c;
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  std::vector<std::string> unknown;
  detail::unknown_keys(j, to_json(c), "", unknown);
  if (!unknown.empty()) {
    std::string msg = "config: unknown key";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  try {
    get(j, "seed", c.seed);
    if (j.contains("cohort_dir")) c.cohort_dir = j.at("cohort_dir").get<std::string>();
    if (j.contains("cohort")) {
      const auto& o = j.at("cohort");
      auto& co = c.cohort;
      get(o, "subjects", co.subjects);
      get(o, "duration_s", co.duration);
      get(o, "snr_db", co.snr_db);
      get(o, "min_gap_s", co.min_gap);
      get(o, "ca_uncoupled", co.ca_uncoupled);
      get(o, "other_uncoupled", co.other_uncoupled);
      get(o, "artifact_bursts", co.artifact_bursts);
      get(o, "sleep_movement_rate", co.sleep_movement_rate);
      if (o.contains("radar")) {
        const auto& r = o.at("radar");
        auto cur = co.radar;
        get(r, "f0", cur.f0);
        get(r, "B", cur.B);
        get(r, "T_r", cur.T_r);
        get(r, "F", cur.F);
        get(r, "n", cur.n);
        co.radar = synth::RadarConfig::make(cur.f0, cur.B, cur.T_r, cur.F, cur.n);
      }
    }
    if (j.contains("stack")) {
      const auto& o = j.at("stack");
      auto& s = c.stack;
      get(o, "frame_len", s.frame_len);
      get(o, "power_frame_len", s.power_frame_len);
      get(o, "frame_hop", s.frame_hop);
      get(o, "range_lo", s.range_lo);
      get(o, "range_hi", s.range_hi);
      get(o, "movement_cutoff", s.movement_cutoff);
      get(o, "band_lo", s.band_lo);
      get(o, "band_hi", s.band_hi);
      get(o, "order", s.order);
      if (o.contains("doppler")) {
        const auto d = o.at("doppler").get<std::string>();
        if (d != "argmax" && d != "first_moment") throw ConfigError("config: stack.doppler must be argmax or first_moment");
        s.doppler = d == "argmax" ? preproc::DopplerEstimator::Argmax : preproc::DopplerEstimator::FirstMoment;
      }
    }
    if (j.contains("detector")) {
      // merge onto the pipeline default rather than the library default
      nlohmann::json d = c.detector;
      d.update(j.at("detector"));
      c.detector = d.get<detect::DetectorConfig>();
    }
    if (j.contains("detector_train")) {
      const auto& o = j.at("detector_train");
      if (o.contains("base")) detail::train_from(o.at("base"), c.detector_train.base);
      get(o, "crops_per_night", c.detector_train.crops_per_night);
      get(o, "crop_len", c.detector_train.crop_len);
      get(o, "event_centred_crops", c.detector_train.event_centred_crops);
      get(o, "eval_every", c.detector_train.eval_every);
    }
    if (j.contains("stager")) c.stager = j.at("stager").get<stage::StagerConfig>();
    if (j.contains("stager_train")) {
      const auto& o = j.at("stager_train");
      auto& st = c.stager_train;
      if (o.contains("stage1")) detail::train_from(o.at("stage1"), st.stage1);
      get(o, "stage2_epochs", st.stage2_epochs);
      get(o, "stage2_lr_max", st.stage2_schedule.lr_max);
      get(o, "stage2_lr_min", st.stage2_schedule.lr_min);
      get(o, "stage2_period", st.stage2_schedule.period);
      get(o, "alpha", st.weights.alpha);
      get(o, "beta", st.weights.beta);
      get(o, "gamma", st.weights.gamma);
      get(o, "eta", st.weights.eta);
      get(o, "duration_unit", st.duration.unit);
      get(o, "printed_recurrence", st.duration.printed_recurrence);
      get(o, "min_duration", st.duration.min_duration);
      get(o, "duration_normalized", st.duration.normalized);
      get(o, "window_epochs", st.window_epochs);
      get(o, "windows_per_night", st.windows_per_night);
    }
    if (j.contains("fusion_train")) {
      const auto& o = j.at("fusion_train");
      if (o.contains("base")) detail::train_from(o.at("base"), c.fusion_train.base);
      get(o, "hidden", c.fusion_train.hidden);
    }
    if (j.contains("fusion_data")) {
      const auto& o = j.at("fusion_data");
      get(o, "min_event_distance", c.fusion_data.min_event_distance);
      get(o, "pseudo_duration", c.fusion_data.pseudo_duration);
      get(o, "window", c.fusion_data.features.window);
      get(o, "od_threshold", c.fusion_data.features.od_threshold);
      get(o, "min_window", c.fusion_data.features.min_window);
    }
    get(j, "omega", c.omega);
    get(j, "tune_omega", c.tune_omega);
    get(j, "omega_grid", c.omega_grid);
    get(j, "count_threshold", c.count_threshold);
    get(j, "tune_count_threshold", c.tune_count_threshold);
    get(j, "count_grid", c.count_grid);
    get(j, "folds", c.folds);
    get(j, "val_subjects", c.val_subjects);
    if (j.contains("outdir")) c.outdir = j.at("outdir").get<std::string>();
    if (j.contains("cache_dir")) c.cache_dir = j.at("cache_dir").get<std::string>();
    get(j, "use_cache", c.use_cache);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace rosa::pipeline
