#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rosa/metrics/agreement.hpp"
#include "rosa/metrics/ahi.hpp"
#include "rosa/metrics/detection.hpp"
#include "rosa/pipeline/run.hpp"

namespace rosa::pipeline {

inline constexpr const char* kReportSchema = "rosa.run-report";
inline constexpr int kReportVersion = 1;
inline constexpr const char* kIccForm = "ICC(2,1): two-way random effects, absolute agreement, single measurement";

namespace detail {

template <typename T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json ahi_json(const metrics::AhiReport& r) {
  return {{"n_apnea", r.n_apnea},
          {"n_hypopnea", r.n_hypopnea},
          {"tst_h", r.tst_hours},
          {"ahi", r.ahi},
          {"severity", std::string(metrics::to_string(r.severity))}};
}

/// ICC, r and Bland-Altman of estimate against reference; cells that cannot be
/// computed (fewer than two pairs, no variance) are null.
inline nlohmann::json agreement_json(const std::vector<double>& est, const std::vector<double>& ref) {
  nlohmann::json j{{"n", est.size()}, {"icc", nullptr}, {"pearson_r", nullptr}, {"bland_altman", nullptr}};
  try {
    j["icc"] = metrics::icc(est, ref);
  } catch (const InvalidArgument&) {
  }
  if (est.size() >= 2) {
    j["pearson_r"] = opt(metrics::pearson_r(est, ref));
    const auto ba = metrics::bland_altman(est, ref);
    j["bland_altman"] = {{"mean_diff", ba.mean_diff}, {"sd_diff", ba.sd_diff}, {"loa_low", ba.loa_low},
                         {"loa_high", ba.loa_high}};
  }
  return j;
}

inline nlohmann::json ap_json(const std::vector<metrics::EvalSet>& sets) {
  nlohmann::json per_class = nlohmann::json::object();
  for (auto k : kEventKinds) per_class[std::string(to_string(k))] = opt(metrics::class_average_precision(sets, k));
  return {{"overall", opt(metrics::overall_average_precision(sets))}, {"per_class", per_class}};
}

}  // namespace detail

/// Metrics over a set of test outcomes; used for each fold and for the pooled block.
inline nlohmann::json metrics_block(const RunResult& r, const std::vector<const SubjectOutcome*>& outs) {
  nlohmann::json b;
  b["subjects"] = outs.size();

  nlohmann::json staging = nlohmann::json::object();
  for (std::size_t g = 0; g < kGranularities.size(); ++g) {
    std::vector<int> p, t;
    for (const auto* o : outs) {
      const auto [pp, tt] = paired_labels(o->predicted, r.truth_hypnograms[o->index], kGranularities[g]);
      p.insert(p.end(), pp.begin(), pp.end());
      t.insert(t.end(), tt.begin(), tt.end());
    }
    const auto s = staging_score(p, t);
    staging[std::string(stage::to_string(kGranularities[g]))] = {
        {"accuracy", p.empty() ? nlohmann::json(nullptr) : nlohmann::json(s.accuracy)},
        {"kappa", detail::opt(s.kappa)},
        {"epochs", s.epochs}};
  }
  b["staging"] = staging;

  std::vector<metrics::EvalSet> radar, fused;
  for (const auto* o : outs) {
    radar.push_back({o->radar, r.truth_events[o->index]});
    fused.push_back({oxi::segments_of(o->fused), r.truth_events[o->index]});
  }
  b["detection_ap50"] = {{"radar", detail::ap_json(radar)}, {"fused", detail::ap_json(fused)}};

  std::vector<double> est, radar_est, odi, truth, tst_e, tst_t;
  std::size_t excluded = 0;
  for (const auto* o : outs) {
    tst_e.push_back(o->tst_estimated);
    tst_t.push_back(o->tst_truth);
    if (!o->estimated) {
      ++excluded;
      continue;
    }
    est.push_back(o->estimated->ahi);
    radar_est.push_back(o->radar_only->ahi);
    odi.push_back(*o->odi3);
    truth.push_back(o->truth.ahi);
  }
  b["ahi"] = detail::agreement_json(est, truth);
  b["ahi"]["excluded_no_sleep"] = excluded;
  b["ahi_radar_only"] = detail::agreement_json(radar_est, truth);
  b["odi3"] = detail::agreement_json(odi, truth);
  b["tst"] = detail::agreement_json(tst_e, tst_t);

  nlohmann::json thresholds = nlohmann::json::array();
  nlohmann::json confusion = nullptr;
  if (!est.empty()) {
    const auto d = metrics::diagnostic_stats(est, truth, metrics::kAhiThresholds);
    for (const auto& s : d.thresholds)
      thresholds.push_back({{"threshold", s.threshold}, {"tp", s.tp}, {"fp", s.fp}, {"tn", s.tn}, {"fn", s.fn},
                            {"se", detail::opt(s.se)}, {"sp", detail::opt(s.sp)}, {"acc", s.acc},
                            {"kappa", detail::opt(s.kappa)}});
    confusion = d.severity_confusion;
  } else {
    for (double t : metrics::kAhiThresholds)
      thresholds.push_back({{"threshold", t}, {"tp", nullptr}, {"fp", nullptr}, {"tn", nullptr}, {"fn", nullptr},
                            {"se", nullptr}, {"sp", nullptr}, {"acc", nullptr}, {"kappa", nullptr}});
  }
  b["diagnostic"] = thresholds;
  b["severity_confusion"] = {{"order", {"Healthy", "Mild", "Moderate", "Severe"}},
                             {"rows", "reference"},
                             {"columns", "estimated"},
                             {"counts", confusion}};
  return b;
}

inline nlohmann::json subject_json(const RunResult& r, const SubjectOutcome& o) {
  nlohmann::json staging = nlohmann::json::object();
  for (std::size_t g = 0; g < kGranularities.size(); ++g)
    staging[std::string(stage::to_string(kGranularities[g]))] = {
        {"accuracy", o.staging[g].accuracy}, {"kappa", detail::opt(o.staging[g].kappa)}, {"epochs", o.staging[g].epochs}};
  const auto& fo = r.folds[o.fold];
  std::size_t counted = 0;
  for (const auto& f : o.fused) counted += f.segment.score >= fo.count_threshold;
  return {{"id", r.ids[o.index]},
          {"fold", o.fold},
          {"reference", detail::ahi_json(o.truth)},
          {"estimated", o.estimated ? detail::ahi_json(*o.estimated) : nlohmann::json(nullptr)},
          {"radar_only", o.radar_only ? detail::ahi_json(*o.radar_only) : nlohmann::json(nullptr)},
          {"odi3", detail::opt(o.odi3)},
          {"tst_reference_h", o.tst_truth},
          {"tst_estimated_h", o.tst_estimated},
          {"staging", staging},
          {"detections", {{"radar", o.radar.size()}, {"fused", o.fused.size()}, {"counted", counted}}}};
}

/// Whole-run report. Deterministic: no timestamps, paths only as configured.
inline nlohmann::json build_report(const RunResult& r) {
  nlohmann::json rep;
  rep["schema"] = kReportSchema;
  rep["schema_version"] = kReportVersion;
  rep["icc_form"] = kIccForm;
  rep["status"] = r.complete() ? "complete" : "failed";
  rep["failure"] = r.failure ? nlohmann::json{{"stage", r.failed_stage}, {"subject", r.failed_subject}, {"message", *r.failure}}
                             : nlohmann::json(nullptr);
  rep["config"] = r.config;
  auto names = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::string> v;
    for (auto i : idx) v.push_back(r.ids[i]);
    return v;
  };
  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t k = 0; k < r.folds.size(); ++k) {
    const auto& f = r.folds[k];
    std::vector<const SubjectOutcome*> outs;
    for (const auto& o : r.subjects)
      if (o.fold == k) outs.push_back(&o);
    nlohmann::json tuning = nlohmann::json::array();
    for (const auto& [w, ap] : f.omega_val_ap) tuning.push_back({{"omega", w}, {"val_ap50", detail::opt(ap)}});
    folds.push_back({{"fold", k},
                     {"train", names(f.split.train)},
                     {"fit", names(f.split.fit)},
                     {"val", names(f.split.val)},
                     {"test", names(f.split.test)},
                     {"detector", {{"best_epoch", f.detector_best_epoch}, {"val_ap50", f.detector_val_ap}}},
                     {"fusion", {{"samples", f.fusion_data.samples.size()}, {"resampled", f.fusion_data.resampled}}},
                     {"omega", f.omega},
                     {"omega_tuning", tuning},
                     {"count_threshold", f.count_threshold},
                     {"radar_count_threshold", f.radar_count_threshold},
                     {"checkpoints", f.checkpoint_files},
                     {"metrics", metrics_block(r, outs)}});
  }
  rep["folds"] = folds;
  if (r.complete()) {
    std::vector<const SubjectOutcome*> all;
    for (const auto& o : r.subjects) all.push_back(&o);
    rep["pooled"] = metrics_block(r, all);
    nlohmann::json sweep = nlohmann::json::array();
    for (std::size_t i = 0; i < r.sweep_omegas.size(); ++i)
      sweep.push_back({{"omega", r.sweep_omegas[i]}, {"ap50", detail::opt(r.sweep_ap[i])}});
    rep["omega_sweep"] = sweep;
  } else {
    rep["pooled"] = nullptr;
    rep["omega_sweep"] = nullptr;
  }
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& o : r.subjects) subjects.push_back(subject_json(r, o));
  rep["subjects"] = subjects;
  return rep;
}

namespace detail {

inline std::string num(const nlohmann::json& v, int digits = 4, double scale = 1.0) {
  if (v.is_null()) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v.get<double>() * scale);
  return buf;
}

inline std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace detail

/// Human-readable summary of a report built by build_report.
inline std::string summary_text(const nlohmann::json& rep) {
  using detail::num;
  using detail::pad;
  std::ostringstream o;
  o << "run status: " << rep.at("status").get<std::string>() << "\n";
  if (!rep.at("failure").is_null()) o << "failure: " << rep.at("failure").at("message").get<std::string>() << "\n";
  o << "agreement statistic: " << rep.at("icc_form").get<std::string>() << "\n";
  auto block = [&](const std::string& title, const nlohmann::json& b) {
    o << "\n== " << title << " (" << b.at("subjects").get<std::size_t>() << " subjects)\n";
    o << "staging       acc(%)    kappa\n";
    for (const char* g : {"WS", "WRLD", "WRNN"}) {
      const auto& s = b.at("staging").at(g);
      o << pad(g, 12) << "  " << pad(num(s.at("accuracy"), 2, 100), 8) << "  " << num(s.at("kappa")) << "\n";
    }
    const auto& ap = b.at("detection_ap50");
    o << "AP@0.5        radar     fused\n";
    o << pad("overall", 12) << "  " << pad(num(ap.at("radar").at("overall"), 2, 100), 8) << "  "
      << num(ap.at("fused").at("overall"), 2, 100) << "\n";
    for (auto k : kEventKinds) {
      const std::string n(to_string(k));
      o << pad(n, 12) << "  " << pad(num(ap.at("radar").at("per_class").at(n), 2, 100), 8) << "  "
        << num(ap.at("fused").at("per_class").at(n), 2, 100) << "\n";
    }
    o << "agreement     ICC       r         mean diff  LoA\n";
    for (const char* m : {"ahi", "ahi_radar_only", "odi3", "tst"}) {
      const auto& a = b.at(m);
      const auto& ba = a.at("bland_altman");
      o << pad(m, 12) << "  " << pad(num(a.at("icc")), 8) << "  " << pad(num(a.at("pearson_r")), 8) << "  "
        << pad(ba.is_null() ? "n/a" : num(ba.at("mean_diff"), 2), 9) << "  "
        << (ba.is_null() ? "n/a" : "[" + num(ba.at("loa_low"), 2) + ", " + num(ba.at("loa_high"), 2) + "]") << "\n";
    }
    o << "AHI cut       Se(%)     Sp(%)     Acc(%)    kappa\n";
    for (const auto& t : b.at("diagnostic"))
      o << pad(num(t.at("threshold"), 0), 12) << "  " << pad(num(t.at("se"), 2, 100), 8) << "  "
        << pad(num(t.at("sp"), 2, 100), 8) << "  " << pad(num(t.at("acc"), 2, 100), 8) << "  " << num(t.at("kappa"))
        << "\n";
    const auto& c = b.at("severity_confusion").at("counts");
    if (!c.is_null()) {
      o << "severity (rows reference, columns estimated): Healthy Mild Moderate Severe\n";
      const char* names[] = {"Healthy", "Mild", "Moderate", "Severe"};
      for (std::size_t i = 0; i < 4; ++i) {
        o << pad(names[i], 12);
        for (std::size_t j = 0; j < 4; ++j) o << "  " << c.at(i).at(j).get<std::size_t>();
        o << "\n";
      }
    }
  };
  for (const auto& f : rep.at("folds")) {
    block("fold " + std::to_string(f.at("fold").get<std::size_t>()), f.at("metrics"));
    o << "omega " << num(f.at("omega"), 2) << ", counting threshold " << num(f.at("count_threshold"), 2)
      << " (radar-only " << num(f.at("radar_count_threshold"), 2) << ")\n";
  }
  if (!rep.at("pooled").is_null()) {
    block("pooled", rep.at("pooled"));
    o << "\nomega sweep   AP@0.5(%)\n";
    for (const auto& s : rep.at("omega_sweep"))
      o << pad(num(s.at("omega"), 2), 12) << "  " << num(s.at("ap50"), 2, 100) << "\n";
  }
  o << "\nsubject       fold  ref AHI   est AHI   radar AHI  ODI3      ref TST   est TST\n";
  for (const auto& s : rep.at("subjects")) {
    const auto& e = s.at("estimated");
    const auto& ro = s.at("radar_only");
    o << pad(s.at("id").get<std::string>(), 12) << "  " << pad(std::to_string(s.at("fold").get<std::size_t>()), 4) << "  "
      << pad(num(s.at("reference").at("ahi"), 2), 8) << "  " << pad(e.is_null() ? "n/a" : num(e.at("ahi"), 2), 8) << "  "
      << pad(ro.is_null() ? "n/a" : num(ro.at("ahi"), 2), 9) << "  " << pad(num(s.at("odi3"), 2), 8) << "  "
      << pad(num(s.at("tst_reference_h"), 2), 8) << "  " << num(s.at("tst_estimated_h"), 2) << "\n";
  }
  return o.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + p.string());
}

namespace detail {

inline std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// subject, class, p_r, t_start, t_end for every radar detection.
inline std::string detections_tsv(const RunResult& r) {
  std::string s = "subject\tclass\tp_r\tt_start\tt_end\n";
  for (const auto& o : r.subjects)
    for (const auto& d : o.radar)
      s += r.ids[o.index] + "\t" + std::string(to_string(d.kind)) + "\t" + detail::g17(d.score) + "\t" +
           detail::g17(d.t_start) + "\t" + detail::g17(d.t_end) + "\n";
  return s;
}

/// Fused detections with both scores and the fused one.
inline std::string fused_tsv(const RunResult& r) {
  std::string s = "subject\tclass\tp_r\tp_s\tp_f\tt_start\tt_end\toximetry\tcounted\n";
  for (const auto& o : r.subjects) {
    const double thr = r.folds[o.fold].count_threshold;
    for (const auto& f : o.fused)
      s += r.ids[o.index] + "\t" + std::string(to_string(f.segment.kind)) + "\t" + detail::g17(f.p_r) + "\t" +
           detail::g17(f.p_s) + "\t" + detail::g17(f.segment.score) + "\t" + detail::g17(f.segment.t_start) + "\t" +
           detail::g17(f.segment.t_end) + "\t" + (f.oximetry ? "1" : "0") + "\t" +
           (f.segment.score >= thr ? "1" : "0") + "\n";
  }
  return s;
}

/// Per-fold fusion training set: label, then the four SpO2 features.
inline std::string fusion_dataset_tsv(const RunResult& r) {
  std::string s = "fold\tlabel\tp_od\tp_or\tv_od\tv_or\n";
  const char* names[] = {"none", "CA", "OA", "MA", "HP"};
  for (std::size_t k = 0; k < r.folds.size(); ++k)
    for (const auto& x : r.folds[k].fusion_data.samples) {
      s += std::to_string(k) + "\t" + names[x.label];
      for (double v : x.x) s += "\t" + detail::g17(v);
      s += "\n";
    }
  return s;
}

/// subject, epoch, reference stage, estimated stage.
inline std::string hypnograms_tsv(const RunResult& r) {
  std::string s = "subject\tepoch\treference\testimated\n";
  for (const auto& o : r.subjects) {
    const auto& t = r.truth_hypnograms[o.index];
    const auto n = std::max(t.size(), o.predicted.size());
    for (std::size_t e = 0; e < n; ++e)
      s += r.ids[o.index] + "\t" + std::to_string(e) + "\t" + (e < t.size() ? std::string(to_string(t.stages[e])) : "-") +
           "\t" + (e < o.predicted.size() ? std::string(to_string(o.predicted.stages[e])) : "-") + "\n";
  }
  return s;
}

}  // namespace rosa::pipeline
