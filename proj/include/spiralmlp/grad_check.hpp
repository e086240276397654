#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace spiralmlp {

/// One block of values to perturb together with the analytic gradient of the
/// loss with respect to it. An empty `indices` checks every entry.
struct GradCheckTarget {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
  std::vector<std::size_t> indices;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;    ///< "name[index]" of the largest relative error
  std::string failure;  ///< set when a non-finite value was met
};

struct GradCheckOptions {
  double tolerance = 1e-6;
  double step = 1e-5;          ///< scaled by max(1, |x|)
  double denominator_floor = 1e-3;
};

/// Central finite differences against the analytic gradient, in double.
///
/// Relative error of one entry is |a - n| / max(|a|, |n|, floor). `loss` is
/// re-evaluated twice per entry; each value is restored afterwards.
inline GradCheckReport grad_check(const std::function<double()>& loss,
                                  std::vector<GradCheckTarget> targets,
                                  GradCheckOptions opt = {}) {
  GradCheckReport rep;
  for (auto& t : targets) {
    std::vector<std::size_t> idx = t.indices;
    if (idx.empty()) {
      idx.resize(t.values.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    }
    for (std::size_t i : idx) {
      const std::string where = t.name + "[" + std::to_string(i) + "]";
      const double x0 = t.values[i];
      const double h = opt.step * std::max(1.0, std::abs(x0));
      t.values[i] = x0 + h;
      const double fp = loss();
      t.values[i] = x0 - h;
      const double fm = loss();
      t.values[i] = x0;
      const double a = t.analytic[i];
      if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(a)) {
        rep.failure = "non-finite value at " + where;
        rep.passed = false;
        return rep;
      }
      const double n = (fp - fm) / (2.0 * h);
      const double abs_err = std::abs(a - n);
      const double rel = abs_err / std::max({std::abs(a), std::abs(n), opt.denominator_floor});
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      if (rel > rep.max_rel_error || rep.checked == 0) {
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
        if (rel >= rep.max_rel_error) rep.worst = where;
      }
      ++rep.checked;
    }
  }
  rep.passed = rep.max_rel_error <= opt.tolerance;
  return rep;
}

}  // namespace spiralmlp
