#include "diffpos/positivity.hpp"

#include <algorithm>
#include <cmath>

namespace diffpos {

namespace {

Vector unit(const Vector& v) { return v / v.norm(); }

// Sign s in {+1, -1} that puts s*d deeper into K.
Vector orient_into(const Cone& k, const Vector& d) { return k.margin(d) >= k.margin(-d) ? d : Vector(-d); }

double safe_hilbert(const Cone& k, const Vector& a, const Vector& b) {
  try {
    return hilbert_distance(k, a, b);
  } catch (const Error& e) {
    if (e.code() == "cones.not_in_cone") return kInf;
    throw;
  }
}

}  // namespace

LinearPfResult linear_pf(const Matrix& a, const Cone& cone, const Vector& x0, int iters) {
  const int n = cone.dim();
  if (a.rows() != n || a.cols() != n || x0.size() != n) throw Error("positivity.dimension", "matrix, cone and start disagree");
  if (x0.norm() == 0.0 || cone.margin(x0) < -1e-12 * x0.norm()) throw Error("positivity.left_cone", "start vector not in the cone");
  LinearPfResult out;
  out.invariance_verified = true;
  for (const auto& r : boundary_rays(cone, 8)) {
    const Vector ar = a * r;
    if (cone.margin(ar) < -1e-12 * std::max(1.0, ar.norm())) out.invariance_verified = false;
  }
  Vector x = unit(x0);
  for (int i = 0; i < iters; ++i) {
    const Vector y = a * x;
    const double ny = y.norm();
    if (!(ny > 0.0)) throw Error("positivity.zero_iterate", "power iterate vanished");
    const Vector next = y / ny;
    if (cone.margin(next) < -1e-12) throw Error("positivity.left_cone", "power iterate left the cone");
    out.iterations = i + 1;
    const double step = (next - x).norm();
    x = next;
    if (step < 1e-12) {
      out.converged = true;
      break;
    }
  }
  out.v = x;
  return out;
}

std::pair<Vector, Vector> interior_pair(const Cone& cone, double eps) {
  const Cone r = shrink(cone, eps);
  const int k = cone.dim() == 2 ? 2 : 8;
  const auto rays = boundary_rays(r, k);
  if (rays.size() < 2) throw Error("positivity.rays", "cone has fewer than two boundary rays");
  return {rays.front(), rays[rays.size() / 2]};
}

PositivityReport check_diff_positivity(const SystemDef& sys, const ConeField& field, const std::vector<Vector>& points,
                                       const std::vector<double>& horizons, const PositivityOptions& opts) {
  if (horizons.empty()) throw Error("positivity.horizons", "need at least one horizon");
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (!(horizons[i] > 0.0) || (i > 0 && horizons[i] <= horizons[i - 1])) {
      throw Error("positivity.horizons", "horizons must be positive and strictly increasing");
    }
  }
  const double t_max = horizons.back();
  const std::size_t nh = horizons.size();

  struct PointResult {
    std::vector<PositivitySample> samples;
    std::string error;
    double diameter = 0.0;
    std::optional<double> rate;
  };
  std::vector<PointResult> per(points.size());

  parallel_for(points.size(), opts.threads, [&](std::size_t pi) {
    PointResult& pr = per[pi];
    try {
      const Vector& x = points[pi];
      const Cone k0 = field(x);
      const auto rays = boundary_rays(k0, opts.rays);
      const auto [ra, rb] = interior_pair(k0, opts.eps);
      pr.diameter = hilbert_distance(k0, ra, rb);
      const auto seg = prolonged_flow(sys, x, Matrix::Identity(sys.dim(), sys.dim()), t_max, opts.integ);
      std::vector<double> ts, logs;
      for (std::size_t j = 0; j < nh; ++j) {
        const double t = horizons[j];
        const Vector y = seg.base.state_at(t);
        const Matrix phi = seg.fundamental_at(t);
        const Cone kt = field(y);
        const Cone rt = shrink(kt, opts.eps);
        for (std::size_t r = 0; r < rays.size(); ++r) {
          const Vector p = unit(phi * rays[r]);
          pr.samples.push_back({static_cast<int>(pi), static_cast<int>(r), t, kt.margin(p), rt.margin(p)});
        }
        const double h = safe_hilbert(kt, phi * ra, phi * rb);
        if (std::isfinite(h) && h >= 1e-12) {
          ts.push_back(t);
          logs.push_back(std::log(h));
        }
      }
      if (nh >= 3 && ts.size() >= 3) pr.rate = -fit_line(ts, logs).slope;
    } catch (const Error& e) {
      pr.samples.clear();
      pr.error = e.code();
    }
  });

  PositivityReport rep;
  rep.points = points;
  rep.horizons = horizons;
  std::vector<bool> strict_ok(nh, true);
  for (std::size_t pi = 0; pi < per.size(); ++pi) {
    const auto& pr = per[pi];
    if (!pr.error.empty()) {
      rep.failures.push_back({static_cast<int>(pi), pr.error});
      continue;
    }
    rep.delta_hat = std::max(rep.delta_hat, pr.diameter);
    if (pr.rate) rep.lambda_hat = rep.lambda_hat ? std::min(*rep.lambda_hat, *pr.rate) : *pr.rate;
    for (const auto& s : pr.samples) {
      if (s.margin < -opts.tol) rep.violations.push_back(rep.samples.size());
      if (s.strict_margin <= 0.0) {
        ++rep.strict_failures;
        const auto j = static_cast<std::size_t>(std::find(horizons.begin(), horizons.end(), s.t) - horizons.begin());
        strict_ok[j] = false;
      }
      rep.samples.push_back(s);
    }
  }
  if (nh < 3) rep.lambda_hat.reset();
  if (!rep.samples.empty()) {
    for (std::size_t j = nh; j-- > 0;) {
      if (!strict_ok[j]) break;
      rep.t_used = horizons[j];
    }
  }
  return rep;
}

PositivityReport check_diff_positivity(const SystemDef& sys, const ConeField& field, const Sampler& sampler,
                                       const std::vector<double>& horizons, const PositivityOptions& opts) {
  if (sampler.box.dim() != sys.dim()) throw Error("positivity.dimension", "sampling box dimension mismatch");
  return check_diff_positivity(sys, field, sample_points(sampler), horizons, opts);
}

PFEstimate pf_vector(const SystemDef& sys, const ConeField& field, const Vector& x, double s_backward,
                     const PfOptions& opts) {
  if (!(s_backward > 0.0)) throw Error("positivity.pf", "backward time must be positive");
  IntegratorOptions io = opts.integ;
  io.max_norm = opts.blowup;
  const int n = sys.dim();
  if (n < 2) throw Error("positivity.dimension", "PF estimation needs dim >= 2");
  const Cone kx = field(x);

  auto attempt = [&](double s) {
    const Vector z = flow(sys, x, -s, io).final_state();
    Matrix seeds(n, 2);
    if (opts.seeds.size() >= 2) {
      seeds << opts.seeds[0], opts.seeds[1];
    } else {
      const auto pair = interior_pair(field(z), opts.seed_eps);
      seeds << pair.first, pair.second;
    }
    // Unit-length chunks with renormalised columns keep the pushed vectors
    // well above the absolute tolerance when the flow contracts.
    Vector y = z;
    Matrix pushed = seeds;
    double done = 0.0;
    while (done < s) {
      const double dt = std::min(1.0, s - done);
      const auto fwd = prolonged_flow(sys, y, pushed, dt, io);
      y = fwd.base.final_state();
      pushed = fwd.final_fundamental();
      for (int c = 0; c < 2; ++c) pushed.col(c) = unit(pushed.col(c));
      done += dt;
    }
    const Vector p1 = orient_into(kx, unit(pushed.col(0)));
    const Vector p2 = orient_into(kx, unit(pushed.col(1)));
    PFEstimate e;
    e.x = x;
    e.w = p1;
    e.s_used = s;
    e.residual = safe_hilbert(kx, p1, p2);
    e.margin = kx.margin(p1);
    return e;
  };

  std::optional<PFEstimate> best;
  double s = std::min(s_backward, opts.s_max);
  double s_good = 0.0;
  int retreats = 0;
  while (true) {
    try {
      PFEstimate e = attempt(s);
      e.retreats = retreats;
      best = e;
      if (e.residual < opts.tol || s >= opts.s_max) return e;
      s_good = s;
      s = std::min(2.0 * s, opts.s_max);
    } catch (const Error& e) {
      const bool escaped = e.module() == "dynsys";
      if (!escaped && e.code() != "cones.not_in_cone") throw;
      if (!best) throw Error("positivity.backward_blowup", "backward flow left the analysis region (" + e.code() + ")");
      if (++retreats > 6) {
        best->retreats = retreats;
        return *best;
      }
      s = 0.5 * (s_good + s);
    }
  }
}

RateFit contraction_rate(const SystemDef& sys, const ConeField& field, const Vector& x, const std::vector<double>& grid,
                         const std::optional<std::pair<Vector, Vector>>& rays, const IntegratorOptions& opts) {
  if (grid.size() < 2) throw Error("positivity.horizons", "rate fit needs at least two grid times");
  const double t_max = *std::max_element(grid.begin(), grid.end());
  const Cone kx = field(x);
  const auto pair = rays ? *rays : interior_pair(kx, 0.5);
  if (kx.margin(pair.first) <= 0.0 || kx.margin(pair.second) <= 0.0) {
    throw Error("positivity.rays", "rate rays must be interior to K(x)");
  }
  const auto seg = prolonged_flow(sys, x, Matrix::Identity(sys.dim(), sys.dim()), t_max, opts);
  RateFit out;
  std::vector<double> ts, logs;
  for (double t : grid) {
    const Matrix phi = seg.fundamental_at(t);
    const Cone kt = field(seg.base.state_at(t));
    const double h = safe_hilbert(kt, phi * pair.first, phi * pair.second);
    if (!std::isfinite(h)) throw Error("positivity.rays_left_cone", "pushed rays left the cone at t=" + std::to_string(t));
    out.times.push_back(t);
    out.h.push_back(h);
    if (h >= 1e-12) {
      ts.push_back(t);
      logs.push_back(std::log(h));
    }
  }
  const LinearFit f = fit_line(ts, logs);
  out.used = f.points;
  out.slope = f.slope;
  out.intercept = f.intercept;
  out.lambda = -f.slope;
  return out;
}

std::string to_string(DichotomyVerdict v) {
  switch (v) {
    case DichotomyVerdict::kAlignedAttractor:
      return "AlignedAttractor";
    case DichotomyVerdict::kTransversalSensitive:
      return "TransversalSensitive";
    case DichotomyVerdict::kUndetermined:
      return "Undetermined";
  }
  return "Undetermined";
}

DichotomyReport dichotomy_classify(const SystemDef& sys, const ConeField& field, const Vector& x0, double horizon,
                                   const DichotomyOptions& opts) {
  if (!(horizon > 0.0) || opts.grid < 4) throw Error("positivity.horizons", "need a positive horizon and grid >= 4");
  IntegratorOptions io = opts.integ;
  io.max_norm = opts.blowup;
  const int n = sys.dim();
  ProlongedSegment seg;
  try {
    seg = prolonged_flow(sys, x0, Matrix::Identity(n, n), horizon, io);
  } catch (const Error& e) {
    if (e.code() == "dynsys.overflow") throw Error("positivity.unbounded", "trajectory is unbounded over the horizon");
    throw;
  }

  // PF direction along the orbit: an interior ray of K(x0) pushed forward.
  // By PF convergence its direction approaches w(psi_t x0).
  const Cone k0 = field(x0);
  const auto [ra, rb] = interior_pair(k0, 0.1);
  const Vector w0 = unit(ra + rb);

  DichotomyReport rep;
  std::vector<double> late_t, late_log, late_rel;
  bool late_moving = true;
  int eval = -1;
  std::vector<Vector> ys, fs, ps;
  for (int j = 0; j < opts.grid; ++j) {
    const double t = horizon * j / (opts.grid - 1);
    const Vector y = seg.base.state_at(t);
    const Vector f = sys.field(y);
    const Vector p = seg.fundamental_at(t) * w0;
    ys.push_back(y);
    fs.push_back(f);
    ps.push_back(p);
    if (2.0 * t >= horizon) {
      late_t.push_back(t);
      late_log.push_back(std::log(p.norm()));
      late_rel.push_back(std::log(p.norm() / f.norm()));
      if (!(f.norm() >= opts.speed_floor)) late_moving = false;
    }
    if (f.norm() >= opts.speed_floor) {
      eval = j;
      const Cone k = field(y);
      const Vector fh = unit(f);
      if (k.margin(fh) >= -1e-8 || k.margin(-fh) >= -1e-8) rep.f_ever_in_cone = true;
    }
  }
  // On a periodic orbit |Phi w| inherits the oscillation of the speed, which
  // biases a slope fitted over a non-integer number of periods; |Phi w| / |f|
  // removes it. When the speed decays the ratio overstates growth, so keep
  // the smaller of the two fits.
  rep.growth_exponent = fit_line(late_t, late_log).slope;
  if (late_moving) {
    const double rel = fit_line(late_t, late_rel).slope;
    if (rel < rep.growth_exponent) {
      rep.growth_exponent = rel;
      rep.growth_relative = true;
    }
  }
  rep.final_speed = fs.back().norm();
  if (eval >= 0) {
    const auto j = static_cast<std::size_t>(eval);
    rep.eval_time = horizon * eval / (opts.grid - 1);
    const Cone k = field(ys[j]);
    const Vector fh = orient_into(k, unit(fs[j]));
    rep.f_in_cone_final = k.margin(fh) >= -1e-8;
    if (rep.f_in_cone_final) rep.alignment = safe_hilbert(k, fh, orient_into(k, unit(ps[j])));
  }

  const bool bounded_w = rep.growth_exponent <= opts.growth_tol;
  if (rep.f_in_cone_final && rep.alignment < opts.align_tol && bounded_w) {
    rep.verdict = DichotomyVerdict::kAlignedAttractor;
  } else if (!rep.f_ever_in_cone && !bounded_w) {
    rep.verdict = DichotomyVerdict::kTransversalSensitive;
  } else {
    rep.verdict = DichotomyVerdict::kUndetermined;
  }
  return rep;
}

ObstructionReport saddle_obstruction(const SystemDef& sys, const Vector& x_saddle, const Cone& cone, double horizon,
                                     int grid, const IntegratorOptions& opts) {
  const int n = sys.dim();
  if (sys.field(x_saddle).norm() >= 1e-8) throw Error("positivity.not_fixed_point", "obstruction test needs a fixed point");
  if (grid < 3 || !(horizon > 0.0)) throw Error("positivity.horizons", "need a positive horizon and grid >= 3");
  Eigen::EigenSolver<Matrix> es(jacobian(sys, x_saddle));
  const auto ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (std::abs(ev[i].imag()) > 1e-12 * std::max(1.0, std::abs(ev[i]))) {
      throw Error("positivity.complex_spectrum", "linearization has complex eigenvalues");
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ev[a].real() > ev[b].real(); });

  ObstructionReport rep;
  rep.eigenvalues.resize(n);
  for (int i = 0; i < n; ++i) rep.eigenvalues[i] = ev[order[static_cast<std::size_t>(i)]].real();
  rep.unstable = orient_into(cone, unit(es.eigenvectors().col(order.front()).real()));
  rep.stable = orient_into(cone, unit(es.eigenvectors().col(order.back()).real()));
  rep.ray1 = rep.unstable + rep.stable;
  rep.ray2 = 2.0 * rep.unstable + rep.stable;
  for (const Vector* r : {&rep.ray1, &rep.ray2}) {
    if (cone.margin(*r) < -1e-12) throw Error("positivity.rays", "bracketing rays are not in the cone");
  }

  const auto seg = prolonged_flow(sys, x_saddle, Matrix::Identity(n, n), horizon, opts);
  std::vector<double> ts, logs;
  for (int j = 0; j < grid; ++j) {
    const double t = horizon * j / (grid - 1);
    const Matrix phi = seg.fundamental_at(t);
    const double h = safe_hilbert(cone, phi * rep.ray1, phi * rep.ray2);
    rep.times.push_back(t);
    rep.h.push_back(h);
    if (std::isfinite(h) && h >= 1e-12) {
      ts.push_back(t);
      logs.push_back(std::log(h));
    }
  }
  rep.slope = fit_line(ts, logs).slope;
  rep.obstructed = rep.slope >= -1e-3;
  return rep;
}

}  // namespace diffpos
