#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "sadl/rng.hpp"

namespace sadl {

struct GradCheckReport {
  double max_rel = 0.0;
  double mean_rel = 0.0;
  int checked = 0;
  int skipped = 0;
  bool passed(double tol) const { return checked > 0 && max_rel <= tol; }
  // Fraction of probed coordinates within tol (skipped ones excluded).
  double pass_fraction(double tol) const {
    return errors.empty() ? 1.0
                          : static_cast<double>(std::count_if(
                                errors.begin(), errors.end(),
                                [tol](double e) { return e <= tol; })) /
                                static_cast<double>(errors.size());
  }
  std::vector<double> errors;  // per checked coordinate
};

// Scalar function of a flat parameter vector. When kink_log is non-null the
// evaluation must append every relu/abs pre-activation it encounters, in a
// deterministic order (the tape does this when its kink_log is set).
using ScalarFn =
    std::function<double(const std::vector<double>&, std::vector<double>*)>;

// Central finite differences against an analytic gradient on a sampled
// subset of coordinates. A coordinate is skipped when its perturbation
// flips the sign of any relu/abs input that sits within kink_margin of 0
// in either evaluation: the difference quotient straddles a kink there.
// Relative error uses max(|analytic|, |fd|, 1e-6) as denominator.
inline GradCheckReport finite_diff_check(const ScalarFn& f,
                                         const std::vector<double>& theta,
                                         const std::vector<double>& analytic,
                                         double step, double kink_margin,
                                         int max_coords, std::uint64_t seed) {
  GradCheckReport report;
  const int dim = static_cast<int>(theta.size());
  std::vector<int> coords(static_cast<std::size_t>(dim));
  std::iota(coords.begin(), coords.end(), 0);
  if (max_coords > 0 && max_coords < dim) {
    Rng rng(seed);
    for (int i = 0; i < max_coords; ++i) {  // partial Fisher-Yates
      int j = i + rng.uniform_int(dim - i);
      std::swap(coords[static_cast<std::size_t>(i)],
                coords[static_cast<std::size_t>(j)]);
    }
    coords.resize(static_cast<std::size_t>(max_coords));
  }

  std::vector<double> work = theta;
  double sum_rel = 0.0;
  for (int j : coords) {
    std::vector<double> kp, km;
    work[static_cast<std::size_t>(j)] = theta[static_cast<std::size_t>(j)] + step;
    double fp = f(work, &kp);
    work[static_cast<std::size_t>(j)] = theta[static_cast<std::size_t>(j)] - step;
    double fm = f(work, &km);
    work[static_cast<std::size_t>(j)] = theta[static_cast<std::size_t>(j)];

    bool crossing = false;
    if (kp.size() == km.size()) {
      for (std::size_t i = 0; i < kp.size(); ++i) {
        if ((kp[i] > 0) != (km[i] > 0) &&
            (std::abs(kp[i]) < kink_margin || std::abs(km[i]) < kink_margin)) {
          crossing = true;
          break;
        }
      }
    }
    if (crossing) {
      ++report.skipped;
      continue;
    }
    double fd = (fp - fm) / (2.0 * step);
    double an = analytic[static_cast<std::size_t>(j)];
    double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
    double rel = std::abs(fd - an) / denom;
    report.errors.push_back(rel);
    report.max_rel = std::max(report.max_rel, rel);
    sum_rel += rel;
    ++report.checked;
  }
  if (report.checked > 0) report.mean_rel = sum_rel / report.checked;
  return report;
}

}  // namespace sadl
