#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "amaut/rng.hpp"
#include "amaut/tensor.hpp"

namespace amaut {

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::string detail;
};

// Central finite-difference check of an analytic gradient, 64-bit only.
//
// The functional is scalarised as loss = sum(w * f(x)) with fixed random
// weights w, so a single backward pass yields the full input gradient.
// `forward` must be deterministic; `backward` receives (x, dy) and returns
// dx for the same x that was last forwarded.
//
// Points where |x| < exclusion_radius are skipped, which keeps kinked
// activations (relu at 0) out of the comparison.
class GradChecker {
 public:
  using Forward = std::function<Tensord(const Tensord&)>;
  using Backward = std::function<Tensord(const Tensord&, const Tensord&)>;

  GradChecker(double tolerance = 1e-4, double step = 1e-5, int trials = 10)
      : tol_(tolerance), step_(step), trials_(trials) {}

  GradCheckReport check(const Forward& forward, const Backward& backward,
                        const std::vector<std::size_t>& input_shape, RngStream& rng,
                        double exclusion_radius = 0.0) const {
    GradCheckReport report;
    report.pass = true;
    for (int trial = 0; trial < trials_; ++trial) {
      Tensord x(input_shape);
      for (auto& v : x.vec()) v = rng.normal();
      if (exclusion_radius > 0.0)
        for (auto& v : x.vec())
          if (std::abs(v) < exclusion_radius) v = v < 0 ? -exclusion_radius : exclusion_radius;

      Tensord y0 = forward(x);
      Tensord w(y0.shape());
      for (auto& v : w.vec()) v = rng.normal();

      // One forward to refresh caches, then the analytic gradient.
      forward(x);
      Tensord analytic = backward(x, w);

      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double saved = x[i];
        x[i] = saved + step_;
        const double lp = weighted_sum(forward(x), w);
        x[i] = saved - step_;
        const double lm = weighted_sum(forward(x), w);
        x[i] = saved;
        const double numeric = (lp - lm) / (2.0 * step_);
        const double a = analytic[i];
        if (!std::isfinite(a) || !std::isfinite(numeric)) {
          report.pass = false;
          report.detail = "non-finite gradient at index " + std::to_string(i) +
                          " (analytic=" + std::to_string(a) +
                          ", numeric=" + std::to_string(numeric) + ")";
          return report;
        }
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        const double rel = std::abs(a - numeric) / denom;
        if (rel > report.max_rel_err) report.max_rel_err = rel;
      }
      // Restore caches for the caller.
      forward(x);
    }
    report.pass = report.max_rel_err <= tol_;
    if (!report.pass && report.detail.empty())
      report.detail = "max relative error " + std::to_string(report.max_rel_err) +
                      " exceeds tolerance " + std::to_string(tol_);
    return report;
  }

 private:
  static double weighted_sum(const Tensord& y, const Tensord& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
    return s;
  }

  double tol_;
  double step_;
  int trials_;
};

}  // namespace amaut
