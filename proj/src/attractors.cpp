#include "diffpos/attractors.hpp"

#include <algorithm>
#include <cmath>

namespace diffpos {

std::string to_string(FixedPointType t) {
  switch (t) {
    case FixedPointType::kStable:
      return "stable";
    case FixedPointType::kSaddle:
      return "saddle";
    case FixedPointType::kUnstable:
      return "unstable";
  }
  return "unknown";
}

std::string to_string(AttractorKind k) {
  switch (k) {
    case AttractorKind::kFixedPointSet:
      return "FixedPointSet";
    case AttractorKind::kLimitCycle:
      return "LimitCycle";
    case AttractorKind::kFixedPointsWithArcs:
      return "FixedPointsWithArcs";
  }
  return "unknown";
}

namespace {

// Eigen decomposition with eigenvalues sorted by real part, descending.
void sorted_eigen(const Matrix& j, ComplexVector& vals, Eigen::MatrixXcd& vecs) {
  Eigen::EigenSolver<Matrix> es(j);
  const ComplexVector ev = es.eigenvalues();
  const Eigen::MatrixXcd evec = es.eigenvectors();
  std::vector<int> idx(static_cast<std::size_t>(ev.size()));
  for (int i = 0; i < ev.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (ev[a].real() != ev[b].real()) return ev[a].real() > ev[b].real();
    return ev[a].imag() > ev[b].imag();
  });
  vals.resize(ev.size());
  vecs.resize(j.rows(), ev.size());
  for (int i = 0; i < ev.size(); ++i) {
    vals[i] = ev[idx[static_cast<std::size_t>(i)]];
    vecs.col(i) = evec.col(idx[static_cast<std::size_t>(i)]);
  }
}

Vector sign_fixed(Vector v) {
  for (int i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > 1e-12) {
      if (v[i] < 0) v = -v;
      break;
    }
  }
  return v;
}

// Orthonormal basis of {d : l . d = 0}.
Matrix annihilator(const Vector& l) {
  const int n = static_cast<int>(l.size());
  Eigen::HouseholderQR<Matrix> qr(l.normalized());
  const Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  return q.rightCols(n - 1);
}

bool lex_less(const Vector& a, const Vector& b) {
  for (int i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  return false;
}

}  // namespace

std::vector<Vector> grid_seeds(const Box& box, int per_axis) {
  if (per_axis < 2) throw Error("attractors.seeds", "need at least two seeds per axis");
  const int n = box.dim();
  std::vector<Vector> out;
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  while (true) {
    Vector x(n);
    for (int i = 0; i < n; ++i) {
      x[i] = box.lo[i] + (box.hi[i] - box.lo[i]) * idx[static_cast<std::size_t>(i)] / (per_axis - 1);
    }
    out.push_back(x);
    int k = 0;
    while (k < n && ++idx[static_cast<std::size_t>(k)] == per_axis) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == n) break;
  }
  return out;
}

std::vector<FixedPoint> find_fixed_points(const SystemDef& sys, const std::vector<Vector>& seeds, const Box& box,
                                          const NewtonOptions& opts) {
  const Vector pad = 0.1 * (box.hi - box.lo);
  const Vector lo = box.lo - pad, hi = box.hi + pad;
  std::vector<Vector> roots;
  for (const auto& seed : seeds) {
    if (seed.size() != sys.dim()) throw Error("attractors.dimension", "seed has wrong dimension");
    Vector x = seed;
    bool ok = false;
    try {
      for (int it = 0; it < opts.max_iter; ++it) {
        const Vector f = sys.field(x);
        const double fn = f.norm();
        if (fn < opts.f_tol) {
          ok = true;
          break;
        }
        const Vector step = jacobian(sys, x).colPivHouseholderQr().solve(-f);
        if (!step.allFinite()) break;
        // Backtracking on |f|.
        double a = 1.0;
        Vector trial = x + step;
        while (a > 1e-4 && !(sys.field(trial).norm() < fn)) {
          a *= 0.5;
          trial = x + a * step;
        }
        x = trial;
        if (((x - lo).array() < 0).any() || ((hi - x).array() < 0).any()) break;
      }
    } catch (const Error&) {
      ok = false;
    }
    if (!ok) continue;
    if (((x - box.lo).array() < -1e-9).any() || ((box.hi - x).array() < -1e-9).any()) continue;
    bool dup = false;
    for (const auto& r : roots) dup = dup || (r - x).norm() < opts.dedupe;
    if (!dup) roots.push_back(x);
  }
  std::sort(roots.begin(), roots.end(), lex_less);
  std::vector<FixedPoint> out;
  for (const auto& r : roots) {
    FixedPoint fp;
    fp.x = r;
    sorted_eigen(jacobian(sys, r), fp.spectrum, fp.eigenvectors);
    int pos = 0, neg = 0;
    for (int i = 0; i < fp.spectrum.size(); ++i) {
      if (fp.spectrum[i].real() > 0) ++pos;
      if (fp.spectrum[i].real() < 0) ++neg;
    }
    fp.type = pos == 0 && neg == fp.spectrum.size() ? FixedPointType::kStable
              : neg > 0                             ? FixedPointType::kSaddle
                                                    : FixedPointType::kUnstable;
    out.push_back(std::move(fp));
  }
  return out;
}

FixedPointSplit classify_fixed_point(const SystemDef& sys, const Vector& x, double min_gap) {
  const double fn = sys.field(x).norm();
  if (!(fn < 1e-8)) throw Error("attractors.not_fixed_point", "|f(x)| = " + std::to_string(fn));
  const Matrix j = jacobian(sys, x);
  FixedPointSplit out;
  Eigen::MatrixXcd vecs;
  sorted_eigen(j, out.eigenvalues, vecs);
  const int n = sys.dim();
  const double scale = std::max(1.0, out.eigenvalues.cwiseAbs().maxCoeff());
  if (std::abs(out.eigenvalues[0].imag()) > 1e-12 * scale) {
    throw Error("attractors.complex_dominant", "dominant eigenvalue is part of a complex pair");
  }
  out.dominant = out.eigenvalues[0].real();
  out.gap = n > 1 ? out.dominant - out.eigenvalues[1].real() : kInf;
  if (!(out.gap >= min_gap)) throw Error("attractors.small_gap", "spectral gap " + std::to_string(out.gap));
  out.w = sign_fixed(vecs.col(0).real().normalized());
  if (n > 1) {
    // Left eigenvector of the dominant eigenvalue: its annihilator is the sum
    // of the remaining eigenspaces.
    Eigen::EigenSolver<Matrix> left(j.transpose());
    int best = 0;
    for (int i = 1; i < n; ++i) {
      if (std::abs(left.eigenvalues()[i] - out.eigenvalues[0]) < std::abs(left.eigenvalues()[best] - out.eigenvalues[0])) {
        best = i;
      }
    }
    out.n = annihilator(left.eigenvectors().col(best).real());
  } else {
    out.n = Matrix::Zero(1, 0);
  }
  return out;
}

std::optional<EventHit> next_crossing(const SystemDef& sys, const Vector& x, const Section& s, double t_max,
                                      double ignore_until, const IntegratorOptions& opts) {
  EventSpec ev;
  ev.g = [&s](double, const Vector& y) { return s.n.dot(y - s.p); };
  ev.direction = +1;
  ev.ignore_until = ignore_until;
  std::optional<EventHit> hit;
  flow_until(sys, x, t_max, ev, hit, opts);
  return hit;
}

LimitCycle find_limit_cycle(const SystemDef& sys, const Vector& x0, const std::optional<Section>& section,
                            const CycleOptions& opts) {
  const int n = sys.dim();
  if (n < 2) throw Error("attractors.dimension", "limit cycles need dim >= 2");
  const Vector xb = opts.t_burn > 0 ? flow(sys, x0, opts.t_burn, opts.integ).final_state() : x0;
  const Vector fb = sys.field(xb);
  if (fb.norm() < 1e-10) throw Error("attractors.no_return", "trajectory settles at an equilibrium");

  Section sec;
  if (section) {
    sec = *section;
    if (sec.p.size() != n || sec.n.size() != n || !(sec.n.norm() > 0)) {
      throw Error("attractors.section", "section point/normal have wrong shape");
    }
    sec.n.normalize();
  } else {
    sec.p = xb;
    sec.n = fb.normalized();
  }

  const double ignore = 1e-3;
  auto cross = [&](const Vector& x) {
    const auto hit = next_crossing(sys, x, sec, opts.t_max, ignore, opts.integ);
    if (!hit) throw Error("attractors.no_return", "no return to the section within t_max");
    const double fn = sec.n.dot(sys.field(hit->y));
    if (!(fn > 1e-10 * std::max(1.0, sys.field(hit->y).norm()))) {
      throw Error("attractors.tangential_crossing", "flow is tangent to the section");
    }
    return *hit;
  };

  // Anchor on the section.
  Vector x = section ? cross(xb).y : xb;
  x -= sec.n * sec.n.dot(x - sec.p);
  const Matrix basis = annihilator(sec.n);

  LimitCycle out;
  out.section = sec;
  double period = 0.0;
  double closure = kInf;
  for (int it = 0; it <= opts.max_newton; ++it) {
    std::optional<EventHit> hit;
    EventSpec ev;
    ev.g = [&sec](double, const Vector& y) { return sec.n.dot(y - sec.p); };
    ev.direction = +1;
    ev.ignore_until = ignore;
    const auto seg = prolonged_flow_until(sys, x, Matrix::Identity(n, n), opts.t_max, ev, hit, opts.integ);
    if (!hit) throw Error("attractors.no_return", "no return to the section within t_max");
    const Vector fp = sys.field(hit->y);
    const double fn = sec.n.dot(fp);
    if (!(fn > 1e-10 * std::max(1.0, fp.norm()))) {
      throw Error("attractors.tangential_crossing", "flow is tangent to the section");
    }
    period = hit->t;
    const Vector disp = hit->y - x;
    closure = disp.norm();
    out.newton_iterations = it;
    if (closure < 1e-11) break;
    if (it == opts.max_newton) break;
    // Return-map derivative: Phi corrected for the change of return time.
    const Matrix phi = seg.final_fundamental();
    const Matrix dp = (Matrix::Identity(n, n) - fp * sec.n.transpose() / fn) * phi;
    const Matrix jr = basis.transpose() * (dp - Matrix::Identity(n, n)) * basis;
    const Vector rhs = -basis.transpose() * disp;
    const Vector du = jr.completeOrthogonalDecomposition().solve(rhs);
    if (!du.allFinite() || du.norm() < 1e-15) break;
    x += basis * du;
  }
  if (!(closure < opts.closure_tol)) {
    throw Error("attractors.no_convergence", "return map Newton stalled, closure " + std::to_string(closure));
  }
  out.anchor = x;
  out.period = period;
  out.closure = closure;

  const auto seg = prolonged_flow(sys, x, Matrix::Identity(n, n), period, opts.integ);
  const int m = std::max(4, opts.samples);
  for (int i = 0; i < m; ++i) {
    const double t = period * i / m;
    const Vector y = i == 0 ? x : seg.base.state_at(t);
    const Vector f = sys.field(y);
    out.times.push_back(t);
    out.orbit.push_back(y);
    out.tangents.push_back(f.normalized());
    out.phi.push_back(i == 0 ? Matrix::Identity(n, n) : seg.fundamental_at(t));
  }
  out.monodromy = seg.final_fundamental();
  return out;
}

FloquetResult floquet(const SystemDef& sys, const LimitCycle& cycle, const IntegratorOptions& opts) {
  const int n = sys.dim();
  const auto seg = prolonged_flow(sys, cycle.anchor, Matrix::Identity(n, n), cycle.period, opts);
  FloquetResult out;
  out.monodromy = seg.final_fundamental();
  Eigen::EigenSolver<Matrix> es(out.monodromy);
  const ComplexVector ev = es.eigenvalues();
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return std::abs(ev[a]) > std::abs(ev[b]); });
  out.multipliers.resize(n);
  Eigen::MatrixXcd vecs(n, n);
  for (int i = 0; i < n; ++i) {
    out.multipliers[i] = ev[idx[static_cast<std::size_t>(i)]];
    vecs.col(i) = es.eigenvectors().col(idx[static_cast<std::size_t>(i)]);
  }
  for (int i = 1; i < n; ++i) {
    if (std::abs(out.multipliers[i] - 1.0) < std::abs(out.multipliers[out.trivial] - 1.0)) out.trivial = i;
  }
  out.trivial_deviation = std::abs(out.multipliers[out.trivial] - 1.0);
  const Vector fhat = sys.field(cycle.anchor).normalized();
  bool simple = true;
  for (int i = 0; i < n; ++i) {
    if (i != out.trivial && std::abs(out.multipliers[i] - out.multipliers[out.trivial]) < 1e-6) simple = false;
  }
  if (simple) {
    const Vector v = vecs.col(out.trivial).real().normalized();
    out.trivial_angle = std::acos(std::min(1.0, std::abs(v.dot(fhat))));
  } else {
    // Repeated multiplier: every vector of the eigenspace qualifies, so the
    // residual of f itself measures the alignment.
    out.trivial_angle = std::asin(std::min(1.0, (out.monodromy * fhat - fhat).norm()));
  }
  out.product = out.monodromy.determinant();
  out.liouville = std::exp(trace_integral(sys, seg.base, 0.0, cycle.period));
  return out;
}

std::vector<std::vector<Vector>> trace_arcs(const SystemDef& sys, const std::vector<FixedPoint>& fps,
                                            const ArcOptions& opts) {
  std::vector<Vector> stable;
  for (const auto& fp : fps) {
    if (fp.type == FixedPointType::kStable) stable.push_back(fp.x);
  }
  std::vector<std::vector<Vector>> arcs;
  for (const auto& fp : fps) {
    if (fp.type != FixedPointType::kSaddle) continue;
    int unstable = 0;
    for (int i = 0; i < fp.spectrum.size(); ++i) unstable += fp.spectrum[i].real() > 0 ? 1 : 0;
    if (unstable != 1) continue;
    if (std::abs(fp.spectrum[0].imag()) > 1e-12) continue;
    const Vector w = sign_fixed(fp.eigenvectors.col(0).real().normalized());
    for (double sgn : {1.0, -1.0}) {
      EventSpec ev;
      ev.g = [&stable, &opts](double, const Vector& y) {
        double d = kInf;
        for (const auto& s : stable) d = std::min(d, (y - s).norm());
        return d - opts.arrive;
      };
      ev.direction = -1;
      std::optional<EventHit> hit;
      const auto seg = flow_until(sys, fp.x + sgn * opts.offset * w, opts.t_max, ev, hit, opts.integ);
      if (!hit) throw Error("attractors.arc_unbounded", "unstable branch does not reach a stable point");
      std::vector<Vector> arc{fp.x};
      for (const auto& s : seg.states) arc.push_back(s);
      double best = kInf;
      Vector end;
      for (const auto& s : stable) {
        if ((hit->y - s).norm() < best) {
          best = (hit->y - s).norm();
          end = s;
        }
      }
      arc.push_back(end);
      arcs.push_back(std::move(arc));
    }
  }
  return arcs;
}

AttractorModel fixed_point_model(const SystemDef& sys, const std::vector<FixedPoint>& fps, bool with_arcs,
                                 const ArcOptions& opts) {
  AttractorModel m;
  for (const auto& fp : fps) {
    if (fp.type != FixedPointType::kUnstable) m.fixed_points.push_back(fp);
  }
  if (m.fixed_points.empty()) throw Error("attractors.inconsistent", "no stable or saddle points");
  if (with_arcs) m.arcs = trace_arcs(sys, m.fixed_points, opts);
  m.kind = m.arcs.empty() ? AttractorKind::kFixedPointSet : AttractorKind::kFixedPointsWithArcs;
  return m;
}

AttractorModel cycle_model(LimitCycle cycle) {
  AttractorModel m;
  m.kind = AttractorKind::kLimitCycle;
  m.cycle = std::move(cycle);
  return m;
}

std::vector<AttractorPoint> attractor_points(const SystemDef& sys, const AttractorModel& model, int per_piece) {
  std::vector<AttractorPoint> out;
  if (model.kind == AttractorKind::kLimitCycle) {
    if (!model.cycle) throw Error("attractors.inconsistent", "cycle model without a cycle");
    const auto& c = *model.cycle;
    const int m = static_cast<int>(c.orbit.size());
    const int count = std::min(m, std::max(1, per_piece));
    for (int i = 0; i < count; ++i) {
      const auto k = static_cast<std::size_t>(i * m / count);
      out.push_back({c.orbit[k], c.tangents[k]});
    }
    return out;
  }
  for (const auto& fp : model.fixed_points) {
    FixedPointSplit split;
    try {
      split = classify_fixed_point(sys, fp.x);
    } catch (const Error& e) {
      throw Error("attractors.inconsistent", "tangent undefined at a fixed point (" + e.code() + ")");
    }
    out.push_back({fp.x, split.w});
  }
  for (const auto& arc : model.arcs) {
    // Interior points, evenly spaced by arc length.
    std::vector<double> s{0.0};
    for (std::size_t i = 1; i < arc.size(); ++i) s.push_back(s.back() + (arc[i] - arc[i - 1]).norm());
    std::size_t j = 0;
    for (int k = 1; k <= per_piece; ++k) {
      const double target = s.back() * k / (per_piece + 1);
      while (j + 1 < s.size() && s[j + 1] < target) ++j;
      const double u = s[j + 1] > s[j] ? (target - s[j]) / (s[j + 1] - s[j]) : 0.0;
      const Vector x = arc[j] + u * (arc[j + 1] - arc[j]);
      const Vector f = sys.field(x);
      if (!(f.norm() > 1e-14)) continue;
      out.push_back({x, f.normalized()});
    }
  }
  return out;
}

NHCertificate verify_normal_hyperbolicity(const SystemDef& sys, const AttractorModel& model, double horizon,
                                          const NHOptions& opts) {
  const int n = sys.dim();
  if (n < 2) throw Error("attractors.dimension", "normal hyperbolicity needs dim >= 2");
  if (!(horizon > 0)) throw Error("attractors.horizon", "horizon must be positive");
  NHCertificate cert;
  double h = horizon;
  if (model.kind == AttractorKind::kLimitCycle) {
    if (!model.cycle) throw Error("attractors.inconsistent", "cycle model without a cycle");
    const double tau = model.cycle->period;
    h = std::max(1.0, std::round(horizon / tau)) * tau;
  }
  cert.horizon = h;
  const auto pts = attractor_points(sys, model, opts.points);
  for (const auto& p : pts) {
    if (!(p.tangent.norm() > 0.5)) throw Error("attractors.inconsistent", "tangent undefined");
  }
  const int steps = std::max(1, opts.steps);
  std::vector<NHPointFit> fits(pts.size());
  std::vector<double> rho1(pts.size(), 1.0), rho2(pts.size(), 1.0);
  std::vector<std::vector<std::pair<double, double>>> sums(pts.size());

  parallel_for(pts.size(), opts.threads, [&](std::size_t i) {
    const Vector t0 = pts[i].tangent.normalized();
    Matrix q(n, n);
    q.col(0) = t0;
    q.rightCols(n - 1) = annihilator(t0);
    Vector y = pts[i].x;
    double st = 0.0, sn = 0.0;
    const double dt = h / steps;
    for (int k = 0; k < steps; ++k) {
      const auto seg = prolonged_flow(sys, y, q, dt, opts.integ);
      y = seg.base.final_state();
      Eigen::HouseholderQR<Matrix> qr(seg.final_fundamental());
      const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
      Matrix qq = qr.householderQ() * Matrix::Identity(n, n);
      // Positive diagonal keeps the tangent column oriented.
      for (int c = 0; c < n; ++c) {
        if (r(c, c) < 0) qq.col(c) = -qq.col(c);
      }
      q = qq;
      st += std::log(std::abs(r(0, 0)));
      sn += std::log(std::abs(r(1, 1)));
      sums[i].push_back({st, sn});
    }
    fits[i] = NHPointFit{pts[i].x, st / h, sn / h};
  });

  cert.lambda1 = kInf;
  cert.lambda2 = -kInf;
  for (const auto& f : fits) {
    cert.lambda1 = std::min(cert.lambda1, -f.normal_exponent);
    cert.lambda2 = std::max(cert.lambda2, -f.tangent_exponent);
  }
  const double dt = h / steps;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t k = 0; k < sums[i].size(); ++k) {
      const double t = dt * static_cast<double>(k + 1);
      cert.rho1 = std::max(cert.rho1, std::exp(sums[i][k].second + cert.lambda1 * t));
      cert.rho2 = std::max(cert.rho2, std::exp(-cert.lambda2 * t - sums[i][k].first));
    }
  }
  cert.points = std::move(fits);
  cert.margin = cert.lambda1 - cert.lambda2;
  bool bounds = true;
  for (const auto& f : cert.points) {
    bounds = bounds && f.tangent_exponent >= -cert.lambda2 - opts.fit_tol &&
             f.normal_exponent <= -cert.lambda1 + opts.fit_tol;
  }
  if (!(cert.lambda1 > 0)) {
    cert.reason = "no normal contraction";
  } else if (!(cert.margin > opts.min_margin)) {
    cert.reason = "rate gap below threshold";
  } else if (!bounds) {
    cert.reason = "per-point fit outside bounds";
  }
  cert.verdict = cert.reason.empty();
  return cert;
}

}  // namespace diffpos
