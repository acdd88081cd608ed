#pragma once

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "diffpos/flow.hpp"
#include "diffpos/sampling.hpp"

namespace diffpos {

using ComplexVector = Eigen::VectorXcd;

// ---- fixed points -----------------------------------------------------------

enum class FixedPointType { kStable, kSaddle, kUnstable };
std::string to_string(FixedPointType t);

struct FixedPoint {
  Vector x;
  ComplexVector spectrum;  // Jacobian eigenvalues, real part descending
  Eigen::MatrixXcd eigenvectors;
  FixedPointType type = FixedPointType::kStable;
};

struct NewtonOptions {
  int max_iter = 60;
  double f_tol = 1e-12;
  double dedupe = 1e-6;
};

// Damped Newton on f from every seed; seeds that diverge or leave the box
// (enlarged by 10%) are skipped. Roots are deduplicated and sorted
// lexicographically.
std::vector<FixedPoint> find_fixed_points(const SystemDef& sys, const std::vector<Vector>& seeds, const Box& box,
                                          const NewtonOptions& opts = {});

// per_axis^dim grid including the box corners.
std::vector<Vector> grid_seeds(const Box& box, int per_axis);

// T_x = W + N at a hyperbolic point: W spanned by the dominant real
// eigenvector, N = annihilator of the matching left eigenvector.
struct FixedPointSplit {
  ComplexVector eigenvalues;  // real part descending
  Vector w;                   // unit, first nonzero entry positive
  Matrix n;                   // orthonormal dim x (dim-1)
  double dominant = 0.0;
  double gap = 0.0;  // dominant - max Re(other eigenvalues)
};

// Errors: attractors.not_fixed_point (|f| >= 1e-8), attractors.complex_dominant,
// attractors.small_gap (gap < min_gap).
FixedPointSplit classify_fixed_point(const SystemDef& sys, const Vector& x, double min_gap = 1e-6);

// ---- limit cycles -----------------------------------------------------------

struct Section {
  Vector p;  // point on the hyperplane
  Vector n;  // unit normal; crossings counted with n . f > 0
};

struct CycleOptions {
  double t_burn = 50.0;
  double t_max = 100.0;  // longest admissible return time
  double closure_tol = 1e-8;
  int max_newton = 30;
  int samples = 400;  // orbit samples over one period
  IntegratorOptions integ = [] {
    IntegratorOptions o;
    o.abs_tol = 1e-12;
    o.rel_tol = 1e-12;
    return o;
  }();
};

struct LimitCycle {
  Vector anchor;
  double period = 0.0;
  Section section;
  double closure = 0.0;  // |psi^tau(anchor) - anchor|
  int newton_iterations = 0;
  std::vector<double> times;     // uniform over [0, period)
  std::vector<Vector> orbit;
  std::vector<Vector> tangents;  // f / |f|
  std::vector<Matrix> phi;       // Phi(t) from the anchor at each sample
  Matrix monodromy;              // Phi(period)
};

// Burn-in from x0, then Newton on the return map of the section. Without a
// section, the hyperplane through psi^{t_burn}(x0) with normal f/|f| is used.
// Errors: attractors.no_return, attractors.tangential_crossing,
// attractors.no_convergence.
LimitCycle find_limit_cycle(const SystemDef& sys, const Vector& x0, const std::optional<Section>& section = std::nullopt,
                            const CycleOptions& opts = {});

// First rising crossing of the section and its time, starting on or off it.
std::optional<EventHit> next_crossing(const SystemDef& sys, const Vector& x, const Section& s, double t_max,
                                      double ignore_until, const IntegratorOptions& opts);

struct FloquetResult {
  Matrix monodromy;
  ComplexVector multipliers;  // |.| descending
  int trivial = 0;            // index of the multiplier nearest 1
  double trivial_deviation = 0.0;
  double trivial_angle = 0.0;  // angle between f(anchor) and its eigenvector
  double product = 0.0;        // det of the monodromy
  double liouville = 0.0;      // exp of the trace integral over one period
};

FloquetResult floquet(const SystemDef& sys, const LimitCycle& cycle, const IntegratorOptions& opts = CycleOptions{}.integ);

// ---- attractor model ----------------------------------------------------------

enum class AttractorKind { kFixedPointSet, kLimitCycle, kFixedPointsWithArcs };
std::string to_string(AttractorKind k);

struct AttractorModel {
  AttractorKind kind = AttractorKind::kFixedPointSet;
  std::vector<FixedPoint> fixed_points;
  std::optional<LimitCycle> cycle;
  std::vector<std::vector<Vector>> arcs;  // saddle -> stable node polylines
};

struct ArcOptions {
  double offset = 1e-6;
  double arrive = 1e-6;
  double t_max = 200.0;
  IntegratorOptions integ = CycleOptions{}.integ;
};

// Unstable branches of every saddle with a single unstable eigenvalue, traced
// until they come within `arrive` of a stable point. Throws
// attractors.arc_unbounded when a branch does not arrive.
std::vector<std::vector<Vector>> trace_arcs(const SystemDef& sys, const std::vector<FixedPoint>& fps,
                                            const ArcOptions& opts = {});

// Stable points and saddles of `fps`, with arcs when `with_arcs` is set.
AttractorModel fixed_point_model(const SystemDef& sys, const std::vector<FixedPoint>& fps, bool with_arcs = true,
                                 const ArcOptions& opts = {});
AttractorModel cycle_model(LimitCycle cycle);

// Points of the attractor with their unit tangent. Fixed points use the
// dominant eigenvector, everything else f / |f|.
struct AttractorPoint {
  Vector x;
  Vector tangent;
};
std::vector<AttractorPoint> attractor_points(const SystemDef& sys, const AttractorModel& model, int per_piece);

// ---- normal hyperbolicity ---------------------------------------------------

struct NHPointFit {
  Vector x;
  double tangent_exponent = 0.0;
  double normal_exponent = 0.0;  // largest normal exponent
};

struct NHCertificate {
  double lambda1 = 0.0;  // min over points of -normal exponent
  double lambda2 = 0.0;  // max over points of -tangent exponent
  double rho1 = 1.0;     // max_t |Phi v_N| e^{lambda1 t}
  double rho2 = 1.0;     // max_t e^{-lambda2 t} / |Phi v_T| (inverse prefactor)
  double horizon = 0.0;
  std::vector<NHPointFit> points;
  double margin = 0.0;
  bool verdict = false;
  std::string reason;
};

struct NHOptions {
  int points = 24;
  int steps = 100;  // QR re-orthogonalisation steps over the horizon
  double min_margin = 0.05;
  double fit_tol = 1e-9;
  int threads = 1;
  IntegratorOptions integ = CycleOptions{}.integ;
};

// For a cycle the horizon is rounded to a whole number of periods.
// Throws attractors.inconsistent when a tangent is undefined.
NHCertificate verify_normal_hyperbolicity(const SystemDef& sys, const AttractorModel& model, double horizon,
                                          const NHOptions& opts = {});

}  // namespace diffpos
