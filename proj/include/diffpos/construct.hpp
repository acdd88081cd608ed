#pragma once

#include <optional>
#include <string>
#include <vector>

#include "diffpos/attractors.hpp"
#include "diffpos/cones.hpp"
#include "diffpos/positivity.hpp"

namespace diffpos {

// ---- adapted metric ---------------------------------------------------------

struct MetricOptions {
  int quadrature = 256;  // Simpson panels over [0, T_int]
  IntegratorOptions integ = CycleOptions{}.integ;
};

// |v|* = int_0^T |Phi(t) v| e^{lambda2 t} dt on the tangent line, and
// |N u|*^2 = u^T W* u with W* = int_0^T N^T Phi^T Phi N e^{2 lambda1 t} dt on
// the normal complement.
struct AdaptedNorms {
  double tangent_weight = 0.0;
  Matrix w_star;
};

AdaptedNorms adapted_norms(const SystemDef& sys, const Vector& x, const Vector& tangent, const Matrix& normal,
                           double lambda1, double lambda2, double t_int, const MetricOptions& opts = {});

struct Frame {
  Vector x;
  Vector xi;  // unit tangent, orientation matched along the attractor
  Matrix n;   // orthonormal normal basis, dim x (dim-1)
  Matrix w_star;
  double tangent_weight = 0.0;

  // Cone {a xi + N u : a >= |u|_{W*} / tangent_weight}.
  Matrix cone_weight() const { return w_star / (tangent_weight * tangent_weight); }
};

// Polylines of frames. A cycle is a single closed piece; fixed points with
// arcs give one open piece per arc (saddle to node).
struct AttractorFrames {
  std::vector<std::vector<Frame>> pieces;
  bool closed = false;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double t_int = 0.0;
  double spacing = 0.0;
};

// Frames at attractor points spaced at most `spacing` apart in arc length.
// Throws construct.certificate_negative when the certificate verdict is
// negative, construct.quadrature when a weight overflows.
AttractorFrames adapted_metric(const SystemDef& sys, const AttractorModel& model, const NHCertificate& cert,
                               double t_int, double spacing, const MetricOptions& opts = {});

// ---- nearest-point projection ------------------------------------------------

struct Projection {
  int piece = 0;
  int seg = 0;    // segment from frame seg to frame seg + 1 (wrapping when closed)
  double u = 0.0;  // position on the segment
  Vector point;
  double distance = 0.0;
};

Projection project(const AttractorFrames& frames, const Vector& y);

// Frame interpolated at a projection: axis and normal basis linear (normal
// basis aligned by an orthogonal Procrustes rotation first), W* linear,
// tangent weight geometric.
Frame interpolate(const AttractorFrames& frames, const Projection& p);

// ---- cone fields ---------------------------------------------------------------

// K on the attractor (sigma = 1); the strict field is K.strict(x, eps), i.e.
// sigma = 1 - eps. Throws construct.epsilon for eps outside (0, 1).
ConeField attractor_cone_field(const AttractorFrames& frames, double eps);

struct TubeOptions {
  double test_horizon = 20.0;
  int test_frames = 40;
  int test_directions = 6;
  int bisections = 5;
  std::uint64_t seed = 7;
  IntegratorOptions integ;
};

class TubeField {
 public:
  TubeField(SystemDef sys, AttractorFrames frames, double c, double rho);

  double c() const noexcept { return c_; }
  double rho() const noexcept { return rho_; }
  const AttractorFrames& frames() const noexcept { return frames_; }
  const SystemDef& system() const noexcept { return sys_; }

  double distance(const Vector& y) const { return project(frames_, y).distance; }
  // Extended axis: f/|f| on cycles, the interpolated frame axis otherwise;
  // sign matched to the frame.
  Vector xi_bar(const Vector& y, const Frame& f) const;
  Cone cone(const Vector& y) const;
  ConeField field() const;

 private:
  SystemDef sys_;
  AttractorFrames frames_;
  double c_;
  double rho_;
};

// Finds rho(c) by bisection on sampled forward invariance of the c-tube.
// Errors: construct.projection_ambiguous, construct.tube_not_invariant.
TubeField tube_extension(const SystemDef& sys, const AttractorFrames& frames, double c, const TubeOptions& opts = {});

struct BasinEval {
  double tau = 0.0;
  Vector entry;
  Cone cone;
  double condition = 1.0;
};

struct BasinOptions {
  double tau_max = 30.0;
  IntegratorOptions integ = [] {
    IntegratorOptions o;
    o.abs_tol = 1e-11;
    o.rel_tol = 1e-11;
    return o;
  }();
};

// K(x) = Phi(tau, x)^{-1} K^tau(x0): first entry x0 = psi^tau(x) into the
// rho-tube, K^rho the tube cone with normal weight scaled by e^{2 rho}.
class BasinField {
 public:
  BasinField(TubeField tube, BasinOptions opts);

  const TubeField& tube() const noexcept { return tube_; }
  // Throws construct.tau_max when the tube is not reached.
  BasinEval evaluate(const Vector& x) const;
  ConeField field() const;

 private:
  TubeField tube_;
  BasinOptions opts_;
};

BasinField basin_field(const TubeField& tube, double tau_max = 30.0, BasinOptions opts = {});

// Tightened cone K^rho: normal weight times e^{2 rho}.
Cone tighten(const Cone& k, double rho);

// Sampled positivity of the tube field at `count` points of the inner
// rho-tube.
PositivityReport validate_tube(const TubeField& tube, const std::vector<double>& horizons, double eps, int count,
                               std::uint64_t seed, int threads = 1);

// ---- end-to-end certificate ----------------------------------------------------

struct CertifyParams {
  double eps = 0.1;
  double c = 0.3;
  double nh_horizon = 10.0;
  double t_int = 5.0;  // rounded up to whole periods for a cycle
  std::vector<double> horizons{1.0, 2.0, 4.0};
  Sampler sampler;
  int rays = 2;
  double tau_max = 30.0;
  int threads = 1;
  int max_halvings = 4;   // c, c/2, ... while the tube check fails
  int tube_samples = 100;
};

struct CertifyResult {
  NHCertificate nh;
  std::optional<FloquetResult> floquet;
  std::optional<AttractorFrames> frames;
  double c = 0.0;  // tube radius actually used
  double rho = 0.0;
  std::optional<ConeField> field;
  std::optional<PositivityReport> report;
  bool success = false;
  std::string stage;  // stage that failed, empty on success
  std::string error;  // error code or verdict reason
};

// NH check, adapted metric, tube, basin field, then sampled positivity.
// Stage failures are reported in the result, not thrown.
CertifyResult certificate(const SystemDef& sys, const AttractorModel& model, const CertifyParams& params);

}  // namespace diffpos
