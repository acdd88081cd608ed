#pragma once

#include <optional>
#include <string>
#include <vector>

#include "diffpos/cones.hpp"
#include "diffpos/flow.hpp"
#include "diffpos/sampling.hpp"

namespace diffpos {

// ---- linear baseline -------------------------------------------------------

struct LinearPfResult {
  Vector v;  // unit vector
  int iterations = 0;
  bool converged = false;            // Cauchy stop |x_{n+1} - x_n| < 1e-12
  bool invariance_verified = false;  // A maps the sampled boundary rays into K
};

// Power iteration A^n x0 / |A^n x0|. Throws positivity.left_cone when an
// iterate leaves K, positivity.zero_iterate when A^n x0 vanishes.
LinearPfResult linear_pf(const Matrix& a, const Cone& cone, const Vector& x0, int iters = 10000);

// ---- sampled strict differential positivity --------------------------------

struct PositivitySample {
  int point = 0;
  int ray = 0;
  double t = 0.0;
  double margin = 0.0;         // of Phi(t) d / |Phi(t) d| in K(psi_t x)
  double strict_margin = 0.0;  // same vector in R(psi_t x) = shrink(K, eps)
};

struct SampleFailure {
  int point = 0;
  std::string code;
};

struct PositivityReport {
  std::vector<Vector> points;
  std::vector<double> horizons;
  std::vector<PositivitySample> samples;
  std::vector<std::size_t> violations;  // indices of samples with margin < -tol
  int strict_failures = 0;              // samples with strict margin <= 0
  std::vector<SampleFailure> failures;
  std::optional<double> t_used;      // first horizon from which every strict margin is positive
  std::optional<double> lambda_hat;  // worst per-point Hilbert contraction rate (>= 3 horizons)
  double delta_hat = 0.0;            // max Hilbert diameter of R(x) over sampled points
};

struct PositivityOptions {
  int rays = 2;
  double eps = 0.1;  // strict cone R = shrink(K, eps)
  double tol = 1e-8;
  int threads = 1;
  IntegratorOptions integ;
};

PositivityReport check_diff_positivity(const SystemDef& sys, const ConeField& field, const std::vector<Vector>& points,
                                       const std::vector<double>& horizons, const PositivityOptions& opts = {});
PositivityReport check_diff_positivity(const SystemDef& sys, const ConeField& field, const Sampler& sampler,
                                       const std::vector<double>& horizons, const PositivityOptions& opts = {});

// Two distinct interior rays of K: boundary rays of shrink(K, eps), taken
// opposite each other when there are more than two.
std::pair<Vector, Vector> interior_pair(const Cone& cone, double eps);

// ---- Perron-Frobenius vector field ------------------------------------------

struct PFEstimate {
  Vector x;
  Vector w;  // unit, oriented into K(x)
  double s_used = 0.0;
  double residual = kInf;  // Hilbert distance in K(x) between the two seeded estimates
  double margin = 0.0;     // margin of w in K(x)
  int retreats = 0;        // times s was pulled back after a backward blow-up
};

struct PfOptions {
  double s_max = 30.0;
  double tol = 1e-6;
  double blowup = 1e6;
  double seed_eps = 0.1;
  std::vector<Vector> seeds;  // optional explicit seeds at psi_{-s}(x)
  IntegratorOptions integ = [] {
    IntegratorOptions o;
    o.abs_tol = 1e-12;
    o.rel_tol = 1e-12;
    return o;
  }();
};

// w(x) = lim D psi^s(psi^{-s} x) d / |.|. The state is integrated back to
// z = psi^{-s}(x) and both seeds are pushed forward from z with the
// variational equation. (Inverting D psi^{-s}(x) instead would cost accuracy
// on the order of tol * cond, which grows with s.) s doubles from s_backward
// until the residual drops below tol or s reaches s_max; after a backward
// blow-up s bisects towards the last good value, at most six times. Throws
// positivity.backward_blowup when even s_backward leaves the guard.
PFEstimate pf_vector(const SystemDef& sys, const ConeField& field, const Vector& x, double s_backward,
                     const PfOptions& opts = {});

// ---- contraction rate --------------------------------------------------------

struct RateFit {
  double lambda = 0.0;  // -slope
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> times;
  std::vector<double> h;
  int used = 0;  // points with h >= 1e-12 entering the fit
};

// Least-squares slope of log h(Phi(t) d1, Phi(t) d2) over the grid, measured
// in K(psi_t x). Throws positivity.rays_left_cone when h becomes infinite.
RateFit contraction_rate(const SystemDef& sys, const ConeField& field, const Vector& x, const std::vector<double>& grid,
                         const std::optional<std::pair<Vector, Vector>>& rays = std::nullopt,
                         const IntegratorOptions& opts = {});

// ---- dichotomy --------------------------------------------------------------

enum class DichotomyVerdict { kAlignedAttractor, kTransversalSensitive, kUndetermined };
std::string to_string(DichotomyVerdict v);

struct DichotomyReport {
  DichotomyVerdict verdict = DichotomyVerdict::kUndetermined;
  bool f_in_cone_final = false;  // f in K or -K at the evaluation time
  bool f_ever_in_cone = false;
  double eval_time = 0.0;        // last grid time with |f| >= 1e-6
  double alignment = kInf;       // Hilbert distance between f and the PF direction there
  double growth_exponent = 0.0;  // of |Phi(t) w|, last half of the horizon
  bool growth_relative = false;  // exponent taken from |Phi(t) w| / |f| (smaller fit)
  double final_speed = 0.0;
};

struct DichotomyOptions {
  int grid = 201;
  double align_tol = 1e-3;
  double growth_tol = 0.05;
  double speed_floor = 1e-6;
  double blowup = 1e6;
  IntegratorOptions integ;
};

DichotomyReport dichotomy_classify(const SystemDef& sys, const ConeField& field, const Vector& x0, double horizon,
                                   const DichotomyOptions& opts = {});

// ---- saddle obstruction -----------------------------------------------------

struct ObstructionReport {
  Vector eigenvalues;  // real, descending
  Vector unstable, stable;
  Vector ray1, ray2;  // u + s and 2u + s
  std::vector<double> times;
  std::vector<double> h;
  double slope = 0.0;
  bool obstructed = false;  // slope >= -1e-3
};

ObstructionReport saddle_obstruction(const SystemDef& sys, const Vector& x_saddle, const Cone& cone, double horizon = 5.0,
                                     int grid = 51, const IntegratorOptions& opts = {});

}  // namespace diffpos
