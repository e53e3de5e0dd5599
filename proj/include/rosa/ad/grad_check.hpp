#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rosa/ad/tensor.hpp"

namespace rosa::ad {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;

  /// Worst offenders first; at most `limit` lines.
  std::string summary(std::size_t limit = 5) const {
    auto sorted = entries;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.max_rel_error > b.max_rel_error; });
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error << " tol=" << tolerance;
    for (std::size_t i = 0; i < std::min(limit, sorted.size()); ++i) {
      const auto& e = sorted[i];
      os << "\n  " << e.name << "[" << e.worst_index << "] rel=" << e.max_rel_error << " analytic=" << e.analytic
         << " numeric=" << e.numeric;
    }
    return os.str();
  }
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, scale_floor); the floor keeps
  /// near-zero gradients from turning rounding noise into large ratios.
  double scale_floor = 1e-3;
};

/// Compares reverse-mode gradients of `f` against central finite differences
/// for every element of every parameter. `f` must rebuild the graph from the
/// current parameter values each call.
inline GradCheckReport grad_check(const std::function<Tensor()>& f, ParameterList& params,
                                  GradCheckOptions opt = {}) {
  auto eval = [&]() {
    const double v = f().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
    return v;
  };
  zero_grads(params);
  Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: function value is not finite");
  loss.backward();

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  for (auto& p : params) {
    std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    GradCheckEntry entry{p.name};
    auto values = p.tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + opt.step;
      const double fp = eval();
      values[i] = saved - opt.step;
      const double fm = eval();
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opt.scale_floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > entry.max_rel_error || i == 0) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
        entry.analytic = analytic[i];
        entry.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < opt.tolerance;
  zero_grads(params);
  return report;
}

}  // namespace rosa::ad
