// rosa: command-line driver for the synthetic cohort, training and evaluation pipeline.
//
// Every subcommand after gen-cohort runs the pipeline as far as it needs; cached
// stacks and checkpoints make repeated calls cheap.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rosa/pipeline/config.hpp"
#include "rosa/pipeline/report.hpp"
#include "rosa/pipeline/run.hpp"
#include "rosa/pipeline/svg.hpp"
#include "rosa/synth/container.hpp"

namespace {

using namespace rosa;
using pipeline::PipelineConfig;

enum Exit : int { kOk = 0, kUnexpected = 1, kConfig = 2, kStage = 3, kValidation = 4 };

struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> outdir;
  std::optional<std::size_t> folds;
  std::optional<std::size_t> subjects;
  std::optional<double> hours;
  bool no_cache = false;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_path, "JSON config; absent keys keep their defaults");
  app->add_option("-s,--seed", c.seed, "seed for the cohort and every training run");
  app->add_option("-o,--outdir", c.outdir, "output directory");
  app->add_option("-k,--folds", c.folds, "number of cross-validation folds");
  app->add_option("--subjects", c.subjects, "cohort size");
  app->add_option("--hours", c.hours, "recording length per subject, hours");
  app->add_flag("--no-cache", c.no_cache, "ignore and do not write the artifact cache");
  app->add_flag("-q,--quiet", c.quiet, "no progress output");
}

PipelineConfig resolve(const Common& c) {
  PipelineConfig cfg = c.config_path.empty() ? PipelineConfig{} : pipeline::load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (c.outdir) cfg.outdir = *c.outdir;
  if (c.folds) cfg.folds = *c.folds;
  if (c.subjects) cfg.cohort.subjects = *c.subjects;
  if (c.hours) cfg.cohort.duration = *c.hours * 3600.0;
  if (c.no_cache) cfg.use_cache = false;
  cfg.validate();
  return cfg;
}

pipeline::Progress progress_for(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& m) { std::cerr << "rosa: " << m << "\n"; };
}

/// Every metric cell must be a finite number or an explicit null.
void check_finite(const nlohmann::json& j, const std::string& path, std::vector<std::string>& bad) {
  if (j.is_number_float() && !std::isfinite(j.get<double>())) bad.push_back(path);
  if (j.is_object())
    for (auto it = j.begin(); it != j.end(); ++it) check_finite(*it, path + "/" + it.key(), bad);
  if (j.is_array())
    for (std::size_t i = 0; i < j.size(); ++i) check_finite(j[i], path + "/" + std::to_string(i), bad);
}

void validate_report(const nlohmann::json& rep, std::size_t folds) {
  std::vector<std::string> bad;
  check_finite(rep, "", bad);
  if (rep.at("folds").size() != folds) bad.push_back("/folds: expected " + std::to_string(folds) + " blocks");
  if (rep.at("pooled").is_null()) bad.push_back("/pooled: missing");
  if (!bad.empty()) {
    std::string msg = "report validation failed:";
    for (const auto& b : bad) msg += " " + b;
    throw ValidationError(msg);
  }
}

/// Runs the pipeline; on a stage failure writes the partial report and exits 3.
pipeline::RunResult run_or_fail(const PipelineConfig& cfg, const Common& c) {
  auto r = pipeline::run_pipeline(cfg, progress_for(c));
  if (!r.complete()) {
    const auto rep = pipeline::build_report(r);
    pipeline::write_text(cfg.outdir / "report.partial.json", rep.dump(2) + "\n");
    throw pipeline::PipelineError(r.failed_stage, r.failed_subject, *r.failure);
  }
  return r;
}

int gen_cohort(const Common& c) {
  const auto cfg = resolve(c);
  synth::CohortOptions opt = cfg.cohort;
  opt.seed = cfg.seed;
  const auto dir = cfg.outdir / "cohort";
  std::filesystem::create_directories(dir);
  const auto profiles = synth::make_cohort_profiles(opt);
  for (const auto& p : profiles) {
    synth::SubjectRecord rec;
    try {
      rec = synth::generate_subject(p);
    } catch (const std::exception& e) {
      throw pipeline::PipelineError("generate", p.id, e.what());
    }
    const auto path = dir / (rec.id + synth::kCohortExtension);
    synth::save_subject(path, rec);
    // read back: the container checksum and contents must survive the round trip
    if (!synth::same_contents(synth::load_subject(path), rec))
      throw ValidationError("gen-cohort: " + path.string() + " does not read back identically");
    if (!c.quiet) std::cerr << "rosa: wrote " << path.string() << "\n";
  }
  return kOk;
}

int preprocess(const Common& c) {
  const auto cfg = resolve(c);
  pipeline::ArtifactCache cache(cfg.cache_path(), cfg.use_cache);
  const auto subjects = pipeline::prepare_subjects(cfg, cache, progress_for(c));
  const auto dir = cfg.outdir / "stacks";
  std::filesystem::create_directories(dir);
  for (const auto& s : subjects) {
    preproc::dump_stack(dir / s.id, s.stack);
    pipeline::write_text(dir / (s.id + ".labels.json"), pipeline::detail::labels_json(s).dump(2) + "\n");
  }
  return kOk;
}

int train(const Common& c) {
  const auto cfg = resolve(c);
  const auto r = run_or_fail(cfg, c);
  const auto rep = pipeline::build_report(r);
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : rep.at("folds")) {
    auto g = f;
    g.erase("metrics");
    folds.push_back(g);
  }
  pipeline::write_text(cfg.outdir / "training.json", nlohmann::json{{"folds", folds}}.dump(2) + "\n");
  return kOk;
}

int detect_cmd(const Common& c) {
  const auto cfg = resolve(c);
  const auto r = run_or_fail(cfg, c);
  pipeline::write_text(cfg.outdir / "detections.tsv", pipeline::detections_tsv(r));
  return kOk;
}

int stage_cmd(const Common& c) {
  const auto cfg = resolve(c);
  const auto r = run_or_fail(cfg, c);
  pipeline::write_text(cfg.outdir / "hypnograms.tsv", pipeline::hypnograms_tsv(r));
  return kOk;
}

int fuse_cmd(const Common& c) {
  const auto cfg = resolve(c);
  const auto r = run_or_fail(cfg, c);
  pipeline::write_text(cfg.outdir / "fused.tsv", pipeline::fused_tsv(r));
  pipeline::write_text(cfg.outdir / "fusion_dataset.tsv", pipeline::fusion_dataset_tsv(r));
  return kOk;
}

int evaluate_cmd(const Common& c) {
  const auto cfg = resolve(c);
  const auto r = run_or_fail(cfg, c);
  const auto rep = pipeline::build_report(r);
  pipeline::write_text(cfg.outdir / "report.json", rep.dump(2) + "\n");
  pipeline::write_text(cfg.outdir / "summary.txt", pipeline::summary_text(rep));
  validate_report(rep, cfg.folds);
  if (!c.quiet) std::cout << pipeline::summary_text(rep);
  return kOk;
}

int report_cmd(const Common& c) {
  const auto cfg = resolve(c);
  const auto r = run_or_fail(cfg, c);
  pipeline::emit_report_and_plots(r, cfg.outdir);
  pipeline::write_text(cfg.outdir / "fusion_dataset.tsv", pipeline::fusion_dataset_tsv(r));
  const auto rep = pipeline::build_report(r);
  validate_report(rep, cfg.folds);
  if (!c.quiet) std::cout << pipeline::summary_text(rep);
  return kOk;
}

int sweep_cmd(const Common& c, const std::vector<double>& omegas) {
  const auto cfg = resolve(c);
  for (double w : omegas)
    if (!(w >= 0 && w <= 1)) throw pipeline::ConfigError("sweep-omega: omega outside [0, 1]");
  const auto r = run_or_fail(cfg, c);
  // The run sweeps a fixed grid; recompute here for the requested one.
  std::vector<metrics::EvalSet> radar;
  for (const auto& o : r.subjects) radar.push_back({o.radar, r.truth_events[o.index]});
  const auto radar_ap = metrics::overall_average_precision(radar);
  std::string tsv = "omega\tap50\n";
  for (double w : omegas) {
    std::vector<metrics::EvalSet> sets;
    for (const auto& o : r.subjects) {
      const auto& fo = r.folds[o.fold];
      const auto f = oxi::soft_fuse(o.radar, r.clean[o.index], fo.fusion, {w, cfg.detector.nms, cfg.fusion_data.features});
      sets.push_back({oxi::segments_of(f), r.truth_events[o.index]});
    }
    const auto ap = metrics::overall_average_precision(sets);
    char line[64];
    if (ap)
      std::snprintf(line, sizeof line, "%.2f\t%.17g\n", w, *ap);
    else
      std::snprintf(line, sizeof line, "%.2f\tn/a\n", w);
    tsv += line;
    if (w == 0.0 && ap != radar_ap) throw ValidationError("sweep-omega: omega = 0 does not reproduce the radar-only AP");
  }
  pipeline::write_text(cfg.outdir / "omega_sweep.tsv", tsv);
  if (!c.quiet) std::cout << tsv;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rosa: synthetic radar/oximetry sleep apnea pipeline"};
  app.require_subcommand(1);
  Common common;
  std::vector<double> omegas{0.0, 0.25, 0.5, 0.75, 1.0};
  struct Cmd {
    const char* name;
    const char* help;
  };
  const std::vector<Cmd> cmds{{"gen-cohort", "generate the cohort and write one container per subject"},
                              {"preprocess", "range transform and spectrogram stacks per subject"},
                              {"train", "train detector, stager and fusion network for every fold"},
                              {"detect", "radar event detection on every test subject"},
                              {"stage", "sleep staging on every test subject"},
                              {"fuse", "SpO2 soft fusion of the radar detections"},
                              {"evaluate", "metrics report (JSON and text)"},
                              {"report", "metrics report, exports and figures"},
                              {"sweep-omega", "fused AP for a list of fusion weights"}};
  std::vector<CLI::App*> subs;
  for (const auto& c : cmds) {
    auto* s = app.add_subcommand(c.name, c.help);
    add_common(s, common);
    subs.push_back(s);
  }
  subs.back()->add_option("--omegas", omegas, "fusion weights to evaluate")->delimiter(',');
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }
  try {
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "gen-cohort") return gen_cohort(common);
    if (name == "preprocess") return preprocess(common);
    if (name == "train") return train(common);
    if (name == "detect") return detect_cmd(common);
    if (name == "stage") return stage_cmd(common);
    if (name == "fuse") return fuse_cmd(common);
    if (name == "evaluate") return evaluate_cmd(common);
    if (name == "report") return report_cmd(common);
    if (name == "sweep-omega") return sweep_cmd(common, omegas);
  } catch (const pipeline::ConfigError& e) {
    std::cerr << "rosa: " << e.what() << "\n";
    return kConfig;
  } catch (const pipeline::PipelineError& e) {
    std::cerr << "rosa: stage failure: " << e.what() << "\n";
    return kStage;
  } catch (const ValidationError& e) {
    std::cerr << "rosa: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "rosa: unexpected error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUnexpected;
}
