#pragma once

// Standalone SVG figures. Points carry their raw values in data-x / data-y so the
// files can be checked without reversing the axis transform.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rosa/metrics/agreement.hpp"
#include "rosa/metrics/ahi.hpp"
#include "rosa/pipeline/report.hpp"
#include "rosa/pipeline/run.hpp"

namespace rosa::pipeline {

struct PlotSubject {
  std::string id;
  std::size_t fold = 0;
  double ref_ahi = 0.0;
  std::optional<double> est_ahi;
  double ref_tst = 0.0, est_tst = 0.0;
  Hypnogram ref_hyp, est_hyp;
  std::vector<AnnotatedEvent> truth;
  std::vector<DetectedSegment> counted;  // fused detections that enter the AHI
};

inline std::vector<PlotSubject> plot_input(const RunResult& r) {
  std::vector<PlotSubject> out;
  for (const auto& o : r.subjects) {
    PlotSubject p;
    p.id = r.ids[o.index];
    p.fold = o.fold;
    p.ref_ahi = o.truth.ahi;
    if (o.estimated) p.est_ahi = o.estimated->ahi;
    p.ref_tst = o.tst_truth;
    p.est_tst = o.tst_estimated;
    p.ref_hyp = r.truth_hypnograms[o.index];
    p.est_hyp = o.predicted;
    p.truth = r.truth_events[o.index];
    p.counted = above(oxi::segments_of(o.fused), r.folds[o.fold].count_threshold);
    out.push_back(std::move(p));
  }
  return out;
}

namespace svg {

inline std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return std::string(buf) == "-0.00" ? "0.00" : buf;
}

inline std::string g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

class Doc {
 public:
  Doc(double w, double h) : w_(w), h_(h) {}

  void line(double x1, double y1, double x2, double y2, const std::string& stroke, const std::string& cls = "",
            double width = 1, bool dashed = false) {
    body_ += "<line" + cls_attr(cls) + " x1=\"" + f2(x1) + "\" y1=\"" + f2(y1) + "\" x2=\"" + f2(x2) + "\" y2=\"" + f2(y2) +
             "\" stroke=\"" + stroke + "\" stroke-width=\"" + f2(width) + "\"" +
             (dashed ? " stroke-dasharray=\"6 4\"" : "") + "/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& cls = "",
            const std::string& extra = "") {
    body_ += "<rect" + cls_attr(cls) + " x=\"" + f2(x) + "\" y=\"" + f2(y) + "\" width=\"" + f2(std::max(w, 0.0)) +
             "\" height=\"" + f2(std::max(h, 0.0)) + "\" fill=\"" + fill + "\"" + extra + "/>\n";
  }
  void circle(double cx, double cy, double r, const std::string& fill, const std::string& cls, double dx, double dy) {
    body_ += "<circle" + cls_attr(cls) + " cx=\"" + f2(cx) + "\" cy=\"" + f2(cy) + "\" r=\"" + f2(r) + "\" fill=\"" +
             fill + "\" data-x=\"" + g(dx) + "\" data-y=\"" + g(dy) + "\"/>\n";
  }
  void text(double x, double y, const std::string& s, double size = 12, const std::string& anchor = "start",
            const std::string& extra = "") {
    body_ += "<text x=\"" + f2(x) + "\" y=\"" + f2(y) + "\" font-size=\"" + f2(size) + "\" text-anchor=\"" + anchor +
             "\" font-family=\"sans-serif\"" + extra + ">" + escape(s) + "</text>\n";
  }
  std::string str(const std::string& title) const {
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f2(w_) +
           "\" height=\"" + f2(h_) + "\" viewBox=\"0 0 " + f2(w_) + " " + f2(h_) + "\">\n<title>" + escape(title) +
           "</title>\n<rect x=\"0\" y=\"0\" width=\"" + f2(w_) + "\" height=\"" + f2(h_) + "\" fill=\"white\"/>\n" + body_ +
           "</svg>\n";
  }

 private:
  static std::string cls_attr(const std::string& c) { return c.empty() ? "" : " class=\"" + c + "\""; }
  double w_, h_;
  std::string body_;
};

/// Tick step from {1, 2, 5} x 10^k giving at most `max_ticks` intervals over span.
inline double tick_step(double span, int max_ticks = 6) {
  if (!(span > 0)) return 1.0;
  const double raw = span / max_ticks;
  const double p = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * p >= raw) return m * p;
  return 10 * p;
}

/// Linear data-to-pixel mapping with axes, ticks and labels drawn into a Doc.
struct Axes {
  double x0, x1, y0, y1;   // data range
  double left = 60, top = 30, width = 400, height = 400;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * width; }
  double py(double y) const { return top + height - (y - y0) / (y1 - y0) * height; }

  void draw(Doc& d, const std::string& xlabel, const std::string& ylabel) const {
    d.rect(left, top, width, height, "none", "frame", " stroke=\"#444\"");
    const double sx = tick_step(x1 - x0), sy = tick_step(y1 - y0);
    for (double t = std::ceil(x0 / sx) * sx; t <= x1 + 1e-9; t += sx) {
      d.line(px(t), top + height, px(t), top + height + 5, "#444");
      d.text(px(t), top + height + 18, g(t), 11, "middle");
    }
    for (double t = std::ceil(y0 / sy) * sy; t <= y1 + 1e-9; t += sy) {
      d.line(left - 5, py(t), left, py(t), "#444");
      d.text(left - 8, py(t) + 4, g(t), 11, "end");
    }
    d.text(left + width / 2, top + height + 38, xlabel, 13, "middle");
    d.text(16, top + height / 2, ylabel, 13, "middle",
           " transform=\"rotate(-90 16 " + f2(top + height / 2) + ")\"");
  }
};

inline const std::array<const char*, 8> kFoldColours{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                     "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

inline std::string fold_colour(std::size_t k) { return kFoldColours[k % kFoldColours.size()]; }

/// Square method-comparison scatter with identity line and least-squares fit.
inline std::string scatter(const std::vector<double>& ref, const std::vector<double>& est,
                           const std::vector<std::size_t>& fold, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel) {
  double hi = 1.0;
  for (double v : ref) hi = std::max(hi, v);
  for (double v : est) hi = std::max(hi, v);
  hi *= 1.08;
  Axes ax{0, hi, 0, hi};
  Doc d(ax.left + ax.width + 30, ax.top + ax.height + 55);
  d.text(ax.left + ax.width / 2, 20, title, 14, "middle");
  ax.draw(d, xlabel, ylabel);
  d.line(ax.px(0), ax.py(0), ax.px(hi), ax.py(hi), "#888", "identity", 1, true);
  if (ref.size() >= 2) {
    const double n = static_cast<double>(ref.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      mx += ref[i] / n;
      my += est[i] / n;
    }
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      sxx += (ref[i] - mx) * (ref[i] - mx);
      sxy += (ref[i] - mx) * (est[i] - my);
    }
    if (sxx > 0) {
      const double b = sxy / sxx, a = my - b * mx;
      // clip y = a + b x to the plot square
      double xa = 0, xb = hi;
      if (b != 0) {
        const double lo_x = (0 - a) / b, hi_x = (hi - a) / b;
        xa = std::max(0.0, std::min(lo_x, hi_x));
        xb = std::min(hi, std::max(lo_x, hi_x));
      }
      if (xb > xa) d.line(ax.px(xa), ax.py(a + b * xa), ax.px(xb), ax.py(a + b * xb), "#c00", "regression", 1.5);
      d.text(ax.left + 8, ax.top + 16, "y = " + f2(b) + " x + " + f2(a), 11, "start", " fill=\"#c00\"");
    }
  }
  for (std::size_t i = 0; i < ref.size(); ++i)
    d.circle(ax.px(ref[i]), ax.py(est[i]), 4, fold_colour(fold[i]), "point", ref[i], est[i]);
  return d.str(title);
}

/// Difference (estimate minus reference) against the pair mean, with mean and limits.
inline std::string bland_altman_plot(const std::vector<double>& ref, const std::vector<double>& est,
                                     const std::vector<std::size_t>& fold, const std::string& title,
                                     const std::string& quantity) {
  std::vector<double> mean, diff;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    mean.push_back((ref[i] + est[i]) / 2);
    diff.push_back(est[i] - ref[i]);
  }
  std::optional<metrics::BlandAltman> ba;
  if (ref.size() >= 2) ba = metrics::bland_altman(est, ref);
  double xhi = 1.0, yabs = 1.0;
  for (double v : mean) xhi = std::max(xhi, v);
  for (double v : diff) yabs = std::max(yabs, std::abs(v));
  if (ba) yabs = std::max({yabs, std::abs(ba->loa_low), std::abs(ba->loa_high)});
  xhi *= 1.08;
  yabs *= 1.15;
  Axes ax{0, xhi, -yabs, yabs};
  ax.height = 300;
  Doc d(ax.left + ax.width + 90, ax.top + ax.height + 55);
  d.text(ax.left + ax.width / 2, 20, title, 14, "middle");
  ax.draw(d, "mean of estimate and reference " + quantity, "estimate - reference");
  d.line(ax.px(0), ax.py(0), ax.px(xhi), ax.py(0), "#bbb", "zero");
  if (ba) {
    d.line(ax.px(0), ax.py(ba->mean_diff), ax.px(xhi), ax.py(ba->mean_diff), "#c00", "mean", 1.5);
    d.line(ax.px(0), ax.py(ba->loa_high), ax.px(xhi), ax.py(ba->loa_high), "#c00", "loa", 1, true);
    d.line(ax.px(0), ax.py(ba->loa_low), ax.px(xhi), ax.py(ba->loa_low), "#c00", "loa", 1, true);
    d.text(ax.left + ax.width + 4, ax.py(ba->mean_diff) + 4, "mean " + f2(ba->mean_diff), 11);
    d.text(ax.left + ax.width + 4, ax.py(ba->loa_high) - 2, "+1.96 SD " + f2(ba->loa_high), 11);
    d.text(ax.left + ax.width + 4, ax.py(ba->loa_low) + 12, "-1.96 SD " + f2(ba->loa_low), 11);
  }
  for (std::size_t i = 0; i < mean.size(); ++i)
    d.circle(ax.px(mean[i]), ax.py(diff[i]), 4, fold_colour(fold[i]), "point", mean[i], diff[i]);
  return d.str(title);
}

/// 4x4 severity table, reference in rows, estimate in columns, shaded by row share.
inline std::string confusion_plot(const std::array<std::array<std::size_t, 4>, 4>& m, const std::string& title) {
  const char* names[] = {"Healthy", "Mild", "Moderate", "Severe"};
  const double cell = 80, left = 110, top = 60;
  Doc d(left + 4 * cell + 20, top + 4 * cell + 50);
  d.text(left + 2 * cell, 20, title, 14, "middle");
  d.text(left + 2 * cell, 42, "estimated", 12, "middle");
  d.text(18, top + 2 * cell, "reference", 12, "middle", " transform=\"rotate(-90 18 " + f2(top + 2 * cell) + ")\"");
  for (std::size_t i = 0; i < 4; ++i) {
    std::size_t row = 0;
    for (auto v : m[i]) row += v;
    d.text(left - 6, top + (i + 0.5) * cell + 4, names[i], 12, "end");
    d.text(left + (i + 0.5) * cell, top + 4 * cell + 18, names[i], 12, "middle");
    for (std::size_t j = 0; j < 4; ++j) {
      const double share = row ? static_cast<double>(m[i][j]) / static_cast<double>(row) : 0.0;
      const int shade = static_cast<int>(std::lround(255 - 175 * share));
      char fill[16];
      std::snprintf(fill, sizeof fill, "#%02x%02xff", shade, shade);
      d.rect(left + j * cell, top + i * cell, cell, cell, fill, "cell",
             " stroke=\"#666\" data-row=\"" + std::to_string(i) + "\" data-col=\"" + std::to_string(j) +
                 "\" data-count=\"" + std::to_string(m[i][j]) + "\"");
      d.text(left + (j + 0.5) * cell, top + (i + 0.5) * cell + 5, std::to_string(m[i][j]), 14, "middle");
    }
  }
  return d.str(title);
}

inline const char* stage_colour(Stage s) {
  switch (s) {
    case Stage::W: return "#f4d35e";
    case Stage::N1: return "#9ad1d4";
    case Stage::N2: return "#4f9dc9";
    case Stage::N3: return "#1d4e89";
    case Stage::R: return "#ee964b";
  }
  return "#ccc";
}

inline const char* event_colour(EventKind k) {
  switch (k) {
    case EventKind::CA: return "#7b2cbf";
    case EventKind::OA: return "#d00000";
    case EventKind::MA: return "#e85d04";
    case EventKind::HP: return "#2d6a4f";
  }
  return "#000";
}

/// One strip per subject: reference and estimated hypnograms, annotated events and
/// the detections that were counted.
inline std::string timelines(const std::vector<PlotSubject>& subjects, const std::string& title) {
  double span = 1.0;
  for (const auto& s : subjects) span = std::max({span, s.ref_hyp.duration(), s.est_hyp.duration()});
  const double left = 110, width = 900, row = 14, gap = 18, strip = 4 * row + gap;
  Doc d(left + width + 20, 60 + strip * static_cast<double>(subjects.size()) + 40);
  d.text(left + width / 2, 20, title, 14, "middle");
  auto x = [&](double t) { return left + t / span * width; };
  double y = 40;
  auto hyp_row = [&](const Hypnogram& h, double yy, const char* cls) {
    for (std::size_t e = 0; e < h.size();) {
      std::size_t f = e;
      while (f < h.size() && h.stages[f] == h.stages[e]) ++f;
      d.rect(x(e * h.epoch_len), yy, x(f * h.epoch_len) - x(e * h.epoch_len), row - 2, stage_colour(h.stages[e]), cls);
      e = f;
    }
  };
  for (const auto& s : subjects) {
    d.text(left - 6, y + row - 3, s.id, 11, "end");
    d.text(left - 6, y + 2 * row - 3, "est", 10, "end");
    d.text(left - 6, y + 3 * row - 3, "events", 10, "end");
    d.text(left - 6, y + 4 * row - 3, "detected", 10, "end");
    hyp_row(s.ref_hyp, y, "hyp-ref");
    hyp_row(s.est_hyp, y + row, "hyp-est");
    for (const auto& e : s.truth)
      d.rect(x(e.t_start), y + 2 * row, std::max(1.0, x(e.t_end) - x(e.t_start)), row - 2, event_colour(e.kind), "truth");
    for (const auto& e : s.counted)
      d.rect(x(e.t_start), y + 3 * row, std::max(1.0, x(e.t_end) - x(e.t_start)), row - 2, event_colour(e.kind), "detection");
    y += strip;
  }
  const double step = tick_step(span / 3600.0, 10) * 3600.0;
  for (double t = 0; t <= span + 1e-9; t += step) {
    d.line(x(t), y - gap + 4, x(t), y - gap + 9, "#444");
    d.text(x(t), y - gap + 22, g(t / 3600.0) + " h", 11, "middle");
  }
  double lx = left;
  const double ly = y + 16;
  for (Stage st : {Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::R}) {
    d.rect(lx, ly - 10, 12, 12, stage_colour(st));
    d.text(lx + 16, ly, std::string(to_string(st)), 11);
    lx += 50;
  }
  for (auto k : kEventKinds) {
    d.rect(lx, ly - 10, 12, 12, event_colour(k));
    d.text(lx + 16, ly, std::string(to_string(k)), 11);
    lx += 50;
  }
  return d.str(title);
}

}  // namespace svg

/// Writes the five figures; rejects an empty cohort.
inline std::vector<std::filesystem::path> emit_plots(const std::vector<PlotSubject>& subjects,
                                                     const std::filesystem::path& dir) {
  if (subjects.empty()) throw InvalidArgument("emit_plots: empty cohort, nothing to plot");
  std::filesystem::create_directories(dir);
  std::vector<double> ref, est, tst_r, tst_e;
  std::vector<std::size_t> fold, fold_all;
  std::array<std::array<std::size_t, 4>, 4> conf{};
  for (const auto& s : subjects) {
    tst_r.push_back(s.ref_tst);
    tst_e.push_back(s.est_tst);
    fold_all.push_back(s.fold);
    if (!s.est_ahi) continue;
    ref.push_back(s.ref_ahi);
    est.push_back(*s.est_ahi);
    fold.push_back(s.fold);
    ++conf[static_cast<std::size_t>(metrics::severity_of(s.ref_ahi))][static_cast<std::size_t>(metrics::severity_of(*s.est_ahi))];
  }
  const std::vector<std::pair<std::string, std::string>> files{
      {"ahi_scatter.svg", svg::scatter(ref, est, fold, "AHI: estimate vs reference", "reference AHI (events/h)",
                                       "estimated AHI (events/h)")},
      {"ahi_bland_altman.svg", svg::bland_altman_plot(ref, est, fold, "AHI Bland-Altman", "AHI")},
      {"tst_scatter.svg", svg::scatter(tst_r, tst_e, fold_all, "Total sleep time", "reference TST (h)", "estimated TST (h)")},
      {"severity_confusion.svg", svg::confusion_plot(conf, "Severity: reference vs estimate")},
      {"timelines.svg", svg::timelines(subjects, "Per-subject timelines")}};
  std::vector<std::filesystem::path> out;
  for (const auto& [name, body] : files) {
    write_text(dir / name, body);
    out.push_back(dir / name);
  }
  return out;
}

/// report.json, summary.txt, the TSV exports and the figures under `dir`.
inline void emit_report_and_plots(const RunResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto rep = build_report(r);
  write_text(dir / "report.json", rep.dump(2) + "\n");
  write_text(dir / "summary.txt", summary_text(rep));
  write_text(dir / "detections.tsv", detections_tsv(r));
  write_text(dir / "fused.tsv", fused_tsv(r));
  write_text(dir / "hypnograms.tsv", hypnograms_tsv(r));
  if (r.complete()) emit_plots(plot_input(r), dir / "plots");
}

}  // namespace rosa::pipeline
