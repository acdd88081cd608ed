#pragma once

#include <functional>
#include <string>
#include <vector>

#include "diffpos/flow.hpp"
#include "diffpos/sampling.hpp"

namespace diffpos {

// Riemannian metric |d|_x = sqrt(d^T P(x) d) with P(x) symmetric positive definite.
struct MetricSpec {
  std::function<Matrix(const Vector&)> p;

  static MetricSpec constant(const Matrix& p);
  static MetricSpec identity(int dim);

  // Throws stability.metric when P(x) is not symmetric (1e-12) or not positive definite.
  Matrix at(const Vector& x) const;
  double norm(const Vector& x, const Vector& d) const;
};

struct ContractionSample {
  Vector x, dx;
  double exponent = 0.0;  // fitted growth exponent of |Phi(t) dx|_{psi_t(x)}
  bool violation = false;
  std::string error;  // nonempty when integration failed for this sample
};

struct PairSample {
  Vector x, y;
  double exponent = 0.0;  // fitted growth exponent of the chord |psi_t(x) - psi_t(y)|
  bool violation = false;
  std::string error;
};

struct ContractionReport {
  std::vector<ContractionSample> samples;
  std::vector<PairSample> pairs;
  double worst_exponent = -kInf;       // max over successful samples
  double worst_pair_exponent = -kInf;  // max over successful pairs
  int violations = 0;
  int pair_violations = 0;
  int failures = 0;
};

struct ContractionOptions {
  int grid = 41;  // output times 0, h, ..., horizon
  bool check_pairs = true;
  int threads = 1;
  IntegratorOptions integ;
};

// Samples (x, dx) in the box, integrates the prolonged flow and fits the
// exponent of log |Phi(t) dx|_P by least squares over [0, horizon]. A sample
// violates the target when the exponent exceeds -lambda_target. Sampled
// pairs (x, y) check chord contraction the same way, with the chord measured
// in the metric at its midpoint.
ContractionReport check_metric_contraction(const SystemDef& sys, const MetricSpec& metric, const Sampler& sampler,
                                           double horizon, double lambda_target, const ContractionOptions& opts = {});

struct ConvergenceSeries {
  std::vector<double> times;
  std::vector<double> speed;  // |f(psi_t(x0))|
  double final_speed = 0.0;
  bool monotone = false;  // non-increasing up to 1e-12 relative slack; reported, not asserted
};

ConvergenceSeries fixed_point_convergence(const SystemDef& sys, const Vector& x0, double horizon, int grid = 201,
                                          const IntegratorOptions& opts = {});

}  // namespace diffpos
