#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "diffpos/integrator.hpp"
#include "diffpos/system.hpp"

namespace diffpos {

// Trajectory psi(t, x0) on the accepted-step grid, with dense output.
struct FlowSegment {
  Vector x0;
  std::vector<double> times;
  std::vector<Vector> states;
  std::shared_ptr<const DenseSolution> dense;
  int dim = 0;

  Vector state_at(double t) const { return (*dense)(t).head(dim); }
  double t_end() const { return times.back(); }
  const Vector& final_state() const { return states.back(); }
};

// Trajectory plus the solution of the variational equation dM/dt = Df(x) M
// seeded with M0 (dim x k). With M0 = I the matrices are Phi(t) = D psi^t(x0).
struct ProlongedSegment {
  FlowSegment base;
  std::vector<Matrix> fundamental;
  int columns = 0;

  Matrix fundamental_at(double t) const;
  const Matrix& final_fundamental() const { return fundamental.back(); }
};

FlowSegment flow(const SystemDef& sys, const Vector& x0, double t_end, const IntegratorOptions& opts = {});

// Integrates until t_end or until the event fires. The event function sees
// the state only (first dim components).
FlowSegment flow_until(const SystemDef& sys, const Vector& x0, double t_end, const EventSpec& event,
                       std::optional<EventHit>& hit, const IntegratorOptions& opts = {});

ProlongedSegment prolonged_flow(const SystemDef& sys, const Vector& x0, const Matrix& m0, double t_end,
                                const IntegratorOptions& opts = {});
ProlongedSegment prolonged_flow_until(const SystemDef& sys, const Vector& x0, const Matrix& m0, double t_end,
                                      const EventSpec& event, std::optional<EventHit>& hit,
                                      const IntegratorOptions& opts = {});

// Convenience: endpoint of the flow and the full fundamental matrix there.
struct FlowMap {
  Vector x;
  Matrix phi;
};
FlowMap flow_map(const SystemDef& sys, const Vector& x0, double t, const IntegratorOptions& opts = {});

// Liouville identity check: det Phi(t) against exp(int_0^t trace Df(psi(u)) du),
// the latter by 5-point Gauss-Legendre quadrature on each step of the dense
// trajectory. One entry per output time of the segment.
struct LiouvilleSeries {
  std::vector<double> times;
  std::vector<double> det;
  std::vector<double> trace_exp;
};
LiouvilleSeries liouville_det(const SystemDef& sys, const ProlongedSegment& seg);

// int_{t0}^{t1} trace Df(psi(u)) du along a trajectory.
double trace_integral(const SystemDef& sys, const FlowSegment& seg, double t0, double t1);

}  // namespace diffpos
