#include "diffpos/flow.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace diffpos {

namespace {

Rhs field_rhs(const SystemDef& sys) {
  return [&sys](double, const Vector& y, Vector& dy) { dy = sys.field(y); };
}

Rhs prolonged_rhs(const SystemDef& sys, int k) {
  const int n = sys.dim();
  return [&sys, n, k](double, const Vector& y, Vector& dy) {
    const Vector x = y.head(n);
    const Matrix j = jacobian(sys, x);
    dy.resize(y.size());
    dy.head(n) = sys.field(x);
    const Eigen::Map<const Matrix> m(y.data() + n, n, k);
    Eigen::Map<Matrix> dm(dy.data() + n, n, k);
    dm.noalias() = j * m;
  };
}

FlowSegment make_segment(const Vector& x0, int dim, DenseSolution sol) {
  FlowSegment seg;
  seg.x0 = x0;
  seg.dim = dim;
  auto shared = std::make_shared<const DenseSolution>(std::move(sol));
  seg.times = shared->times();
  seg.states.reserve(shared->states().size());
  for (const auto& y : shared->states()) seg.states.push_back(y.head(dim));
  seg.states.front() = x0;
  seg.dense = std::move(shared);
  return seg;
}

ProlongedSegment make_prolonged(const Vector& x0, int dim, int k, DenseSolution sol) {
  std::vector<Matrix> mats;
  mats.reserve(sol.states().size());
  for (const auto& y : sol.states()) mats.push_back(Eigen::Map<const Matrix>(y.data() + dim, dim, k));
  ProlongedSegment out;
  out.base = make_segment(x0, dim, std::move(sol));
  out.fundamental = std::move(mats);
  out.columns = k;
  return out;
}

Vector pack(const Vector& x0, const Matrix& m0) {
  Vector y(x0.size() + m0.size());
  y.head(x0.size()) = x0;
  y.tail(m0.size()) = Eigen::Map<const Vector>(m0.data(), m0.size());
  return y;
}

void check_inputs(const SystemDef& sys, const Vector& x0) {
  if (x0.size() != sys.dim()) throw Error("dynsys.dimension", "initial state has wrong dimension");
}

}  // namespace

Matrix ProlongedSegment::fundamental_at(double t) const {
  const Vector y = (*base.dense)(t);
  return Eigen::Map<const Matrix>(y.data() + base.dim, base.dim, columns);
}

FlowSegment flow(const SystemDef& sys, const Vector& x0, double t_end, const IntegratorOptions& opts) {
  check_inputs(sys, x0);
  Integrator integ(opts);
  return make_segment(x0, sys.dim(), integ.solve(field_rhs(sys), 0.0, x0, t_end));
}

FlowSegment flow_until(const SystemDef& sys, const Vector& x0, double t_end, const EventSpec& event,
                       std::optional<EventHit>& hit, const IntegratorOptions& opts) {
  check_inputs(sys, x0);
  Integrator integ(opts);
  return make_segment(x0, sys.dim(), integ.solve(field_rhs(sys), 0.0, x0, t_end, 0, &event, &hit));
}

ProlongedSegment prolonged_flow(const SystemDef& sys, const Vector& x0, const Matrix& m0, double t_end,
                                const IntegratorOptions& opts) {
  check_inputs(sys, x0);
  const int n = sys.dim();
  const int k = static_cast<int>(m0.cols());
  if (m0.rows() != n || k < 1 || k > n) throw Error("dynsys.dimension", "seed matrix must be dim x k with k <= dim");
  if (!m0.allFinite()) throw Error("dynsys.nonfinite", "seed matrix not finite");
  Integrator integ(opts);
  return make_prolonged(x0, n, k, integ.solve(prolonged_rhs(sys, k), 0.0, pack(x0, m0), t_end, n));
}

ProlongedSegment prolonged_flow_until(const SystemDef& sys, const Vector& x0, const Matrix& m0, double t_end,
                                      const EventSpec& event, std::optional<EventHit>& hit,
                                      const IntegratorOptions& opts) {
  check_inputs(sys, x0);
  const int n = sys.dim();
  const int k = static_cast<int>(m0.cols());
  if (m0.rows() != n || k < 1 || k > n) throw Error("dynsys.dimension", "seed matrix must be dim x k with k <= dim");
  EventSpec state_event = event;
  state_event.g = [&event, n](double t, const Vector& y) { return event.g(t, y.head(n)); };
  Integrator integ(opts);
  auto sol = integ.solve(prolonged_rhs(sys, k), 0.0, pack(x0, m0), t_end, n, &state_event, &hit);
  if (hit) hit->y = hit->y.head(n).eval();
  return make_prolonged(x0, n, k, std::move(sol));
}

FlowMap flow_map(const SystemDef& sys, const Vector& x0, double t, const IntegratorOptions& opts) {
  const auto seg = prolonged_flow(sys, x0, Matrix::Identity(sys.dim(), sys.dim()), t, opts);
  return {seg.base.final_state(), seg.final_fundamental()};
}

namespace {

// 5-point Gauss-Legendre rule for trace Df over [a, b] on the dense trajectory.
double trace_panel(const SystemDef& sys, const FlowSegment& seg, double a, double b) {
  static constexpr std::array<double, 5> kNodes = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                                   0.5384693101056831, 0.9061798459386640};
  static constexpr std::array<double, 5> kWeights = {0.2369268850561891, 0.4786286704993665,
                                                     0.5688888888888889, 0.4786286704993665,
                                                     0.2369268850561891};
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double total = 0.0;
  for (std::size_t q = 0; q < kNodes.size(); ++q) {
    total += half * kWeights[q] * jacobian(sys, seg.state_at(mid + half * kNodes[q])).trace();
  }
  return total;
}

}  // namespace

double trace_integral(const SystemDef& sys, const FlowSegment& seg, double t0, double t1) {
  // Panels follow the integrator's step grid, clipped to [t0, t1].
  const double lo = std::min(t0, t1), hi = std::max(t0, t1);
  std::vector<double> knots = {lo};
  for (double t : seg.times) {
    if (t > lo && t < hi) knots.push_back(t);
  }
  knots.push_back(hi);
  std::sort(knots.begin(), knots.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) total += trace_panel(sys, seg, knots[i], knots[i + 1]);
  return t1 >= t0 ? total : -total;
}

LiouvilleSeries liouville_det(const SystemDef& sys, const ProlongedSegment& seg) {
  if (seg.columns != seg.base.dim) throw Error("dynsys.dimension", "liouville check needs a square fundamental matrix");
  LiouvilleSeries out;
  const auto& times = seg.base.times;
  double acc = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (i > 0) acc += trace_panel(sys, seg.base, times[i - 1], times[i]);
    out.times.push_back(times[i]);
    out.det.push_back(seg.fundamental[i].determinant());
    out.trace_exp.push_back(std::exp(acc));
  }
  return out;
}

}  // namespace diffpos
