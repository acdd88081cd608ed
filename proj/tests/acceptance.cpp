// Acceptance criteria 1-8: one PASS/FAIL line each with the measured runtime.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

#include "diffpos/construct.hpp"

using namespace diffpos;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

bool criterion(int id, const char* name, double limit, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = o.pass && secs < limit;
  std::printf("%s %d %s: %s [%.2f s, limit %.0f s]\n", pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs, limit);
  std::fflush(stdout);
  return pass;
}

double rel_err(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1e-300, b.norm()); }

double angle(const Vector& a, const Vector& b) {
  const double c = std::abs(a.dot(b)) / (a.norm() * b.norm());
  return std::acos(std::min(1.0, c));
}

// exp of the integral of trace Df along psi(., x0) over [0, t]: composite
// Simpson on the dense output with a central-difference trace.
double trace_exp_oracle(const SystemDef& sys, const FlowSegment& seg, double t) {
  const int m = 4000;
  const double h = t / m;
  auto tr = [&](double s) {
    const Vector x = seg.state_at(s);
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      Vector e = Vector::Zero(x.size());
      e[i] = 1e-5;
      acc += (sys.field(x + e)[i] - sys.field(x - e)[i]) / 2e-5;
    }
    return acc;
  };
  double sum = tr(0.0) + tr(t);
  for (int k = 1; k < m; ++k) sum += (k % 2 ? 4.0 : 2.0) * tr(k * h);
  return std::exp(sum * h / 3.0);
}

// Gauges by bisection on membership only.
double bisect_gauge(const Cone& k, const Vector& dx, const Vector& dy, bool big) {
  // big: inf{l : l dy - dx in K}; small: sup{l : dx - l dy in K}.
  auto in = [&](double l) { return big ? k.margin(l * dy - dx) >= 0 : k.margin(dx - l * dy) >= 0; };
  double lo = 0.0, hi = 1.0;
  if (big) {
    while (!in(hi)) hi *= 2.0;
  } else {
    while (in(hi)) {
      lo = hi;
      hi *= 2.0;
    }
  }
  for (int i = 0; i < 200 && hi - lo > 1e-16 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (in(mid) == big) hi = mid;
    else lo = mid;
  }
  return 0.5 * (lo + hi);
}

Cone unit_disc_cone() { return Cone::elliptical(vec({1, 0}), Matrix::Identity(1, 1)); }

struct Certified {
  AttractorModel model;
  CertifyResult result;
};

std::optional<Certified> bistable_cert, vdp_cert;

}  // namespace

int main() {
  int failed = 0;

  failed += !criterion(1, "variational integrity", 10.0, [] {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ux(-1.2, 1.2), ut(0.0, 2.5);
    IntegratorOptions tight;
    tight.abs_tol = 1e-14;
    tight.rel_tol = 1e-10;
    double cocycle = 0.0, liouville = 0.0, seeding = 0.0;
    for (const auto& name : builtins::names()) {
      const auto sys = builtins::by_name(name);
      for (int trial = 0; trial < 4; ++trial) {
        const Vector x = vec({ux(rng), ux(rng)});
        const double t = ut(rng), s = ut(rng);
        const auto whole = flow_map(sys, x, t + s, tight);
        const auto first = flow_map(sys, x, s, tight);
        const auto second = flow_map(sys, first.x, t, tight);
        cocycle = std::max(cocycle, rel_err(second.phi * first.phi, whole.phi));

        const auto seg = prolonged_flow(sys, x, Matrix::Identity(2, 2), 5.0, tight);
        for (double tt : {1.0, 2.5, 5.0}) {
          const double det = seg.fundamental_at(tt).determinant();
          const double ref = trace_exp_oracle(sys, seg.base, tt);
          liouville = std::max(liouville, std::abs(det - ref) / std::abs(ref));
        }
        const auto fs = prolonged_flow(sys, x, sys.field(x), 5.0, tight);
        for (std::size_t i = 0; i < fs.base.times.size(); ++i) {
          const Vector f = sys.field(fs.base.states[i]);
          if (f.norm() < 1e-8) continue;
          seeding = std::max(seeding, rel_err(fs.fundamental[i].col(0), f));
        }
      }
    }
    const bool ok = cocycle < 1e-6 && liouville < 1e-6 && seeding < 1e-6;
    return Outcome{ok, "cocycle rel " + fmt(cocycle) + ", Liouville rel " + fmt(liouville) + ", f-seeding rel " + fmt(seeding) +
                           " (all five built-ins, t <= 5)"};
  });

  failed += !criterion(2, "Hilbert metric correctness", 5.0, [] {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // Orthant example against the ratio scan M = max dx_i/dy_i, m = min.
    const Vector dx = vec({2, 1}), dy = vec({1, 1});
    double big = 0.0, small = kInf;
    for (int i = 0; i < 2; ++i) {
      big = std::max(big, dx[i] / dy[i]);
      small = std::min(small, dx[i] / dy[i]);
    }
    const double h = hilbert_distance(Cone::positive_orthant(2), dx, dy);
    const double orthant_err = std::max(std::abs(h - std::log(2.0)), std::abs(h - std::log(big / small)));

    double proj = 0.0, gauge_rel = 0.0;
    int pairs = 0;
    for (int dim : {2, 3}) {
      for (int c = 0; c < 10; ++c) {
        Vector axis(dim);
        for (int i = 0; i < dim; ++i) axis[i] = g(rng);
        Matrix a(dim - 1, dim - 1);
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
        const Matrix w = a * a.transpose() + 0.2 * Matrix::Identity(dim - 1, dim - 1);
        const Cone k = Cone::elliptical(axis.normalized(), w, 0.3 + 0.7 * u(rng));
        const Matrix l = k.weight_factor();
        auto interior = [&] {
          Vector z(dim - 1);
          for (int i = 0; i < dim - 1; ++i) z[i] = g(rng);
          const Vector v = l.transpose().triangularView<Eigen::Upper>().solve(z.normalized());
          // |v|_W = 1, so alpha > 1/sigma is interior.
          return Vector(k.axis() * (1.0 + u(rng)) / k.sigma() * 1.05 + k.normal_basis() * v);
        };
        for (int p = 0; p < 50; ++p) {
          const Vector x = interior(), y = interior();
          const auto ga = gauges(k, x, y);
          const double mb = bisect_gauge(k, x, y, true), ms = bisect_gauge(k, x, y, false);
          gauge_rel = std::max({gauge_rel, std::abs(ga.big_m - mb) / mb, std::abs(ga.small_m - ms) / ms});
          const double s1 = 0.01 + 10 * u(rng), s2 = 0.01 + 10 * u(rng);
          proj = std::max(proj, std::abs(hilbert_distance(k, s1 * x, s2 * y) - hilbert_distance(k, x, y)));
          ++pairs;
        }
      }
    }
    const bool ok = orthant_err < 1e-12 && proj < 1e-12 && gauge_rel < 1e-9 && pairs >= 1000;
    return Outcome{ok, "orthant log2 err " + fmt(orthant_err) + ", projective invariance " + fmt(proj) +
                           ", elliptical gauge rel err " + fmt(gauge_rel) + " over " + std::to_string(pairs) + " pairs"};
  });

  failed += !criterion(3, "linear PF baseline", 5.0, [] {
    Matrix a(2, 2);
    a << -1, 2, 1, -1;
    Eigen::EigenSolver<Matrix> es(a);
    Eigen::Index best = es.eigenvalues()[0].real() > es.eigenvalues()[1].real() ? 0 : 1;
    const Vector oracle = es.eigenvectors().col(best).real().normalized();
    const double gap = std::abs(es.eigenvalues()[0].real() - es.eigenvalues()[1].real());

    const Matrix ea = a.exp();
    const auto lin = linear_pf(ea, Cone::positive_orthant(2), vec({1, 0}));
    const auto sys = builtins::metzler2();
    const auto field = ConeField::constant(Cone::positive_orthant(2));
    double pf_angle = 0.0;
    for (const Vector& x : {vec({0.0, 0.0}), vec({0.1, -0.2}), vec({-0.05, 0.3})}) {
      pf_angle = std::max(pf_angle, angle(pf_vector(sys, field, x, 5.0).w, oracle));
    }
    std::vector<double> grid;
    for (int i = 0; i <= 30; ++i) grid.push_back(1.0 + 3.0 * i / 30);
    const auto fit = contraction_rate(sys, field, vec({0.4, 0.1}), grid);
    const double rate_err = std::abs(fit.lambda - gap) / gap;
    const double lin_angle = angle(lin.v, oracle);
    const bool ok = lin_angle < 1e-6 && pf_angle < 1e-6 && rate_err < 0.1;
    return Outcome{ok, "linear_pf angle " + fmt(lin_angle) + ", pf_vector angle " + fmt(pf_angle) + ", rate " + fmt(fit.lambda) +
                           " vs gap " + fmt(gap) + " (rel " + fmt(rate_err) + ")"};
  });

  failed += !criterion(4, "bistable constant-cone certificate", 60.0, [] {
    const auto rep = check_diff_positivity(builtins::bistable4(), ConeField::constant(unit_disc_cone()),
                                           Sampler{make_box(vec({-1.2, -1.0}), vec({1.2, 1.0})), 200, 7}, {1.0, 2.0, 4.0});
    const bool ok = rep.samples.size() >= 1000 && rep.violations.empty() && rep.failures.empty() && rep.lambda_hat &&
                    *rep.lambda_hat > 0.3;
    return Outcome{ok, std::to_string(rep.samples.size()) + " samples, " + std::to_string(rep.violations.size()) +
                           " violations, lambda_hat " + (rep.lambda_hat ? fmt(*rep.lambda_hat) : "none")};
  });

  failed += !criterion(5, "construction pipeline", 300.0, [] {
    // Bistable: heteroclinic arcs between the three equilibria.
    const auto bis = builtins::bistable4();
    const Box bbox = make_box(vec({-1.2, -1.0}), vec({1.2, 1.0}));
    Certified b;
    b.model = fixed_point_model(bis, find_fixed_points(bis, grid_seeds(bbox, 9), bbox));
    CertifyParams bp;
    bp.sampler = Sampler{bbox, 200, 1};
    b.result = certificate(bis, b.model, bp);
    const auto& br = b.result;
    const bool b_ok = br.success && std::abs(br.nh.lambda1 - 4.0) < 0.2 && std::abs(br.nh.lambda2 - 2.0) < 0.1;

    // Van der Pol: the limit cycle.
    const auto vdp = builtins::vdp();
    Certified v;
    v.model = cycle_model(find_limit_cycle(vdp, vec({2.0, 0.0})));
    CertifyParams vp;
    vp.c = 0.2;
    vp.sampler = Sampler{make_box(vec({-3.0, -3.0}), vec({3.0, 3.0})), 200, 1};
    v.result = certificate(vdp, v.model, vp);
    const auto& vr = v.result;
    bool v_ok = vr.success && vr.floquet && vr.report;
    double trivial = kInf, liou = kInf;
    std::size_t basin = 0;
    if (v_ok) {
      const auto& cyc = *v.model.cycle;
      trivial = std::abs(vr.floquet->multipliers[vr.floquet->trivial] - 1.0);
      // Multiplier product against exp of the trace integral of mu (1 - x1^2)
      // on a fine trapezoid grid of the orbit.
      IntegratorOptions tight;
      tight.abs_tol = tight.rel_tol = 1e-13;
      const auto seg = flow(vdp, cyc.anchor, cyc.period, tight);
      const int m = 20000;
      double integral = 0.0;
      for (int i = 0; i <= m; ++i) {
        const double x1 = seg.state_at(cyc.period * i / m)[0];
        integral += (i == 0 || i == m ? 0.5 : 1.0) * (1.0 - x1 * x1);
      }
      integral *= cyc.period / m;
      std::complex<double> prod = 1.0;
      for (Eigen::Index i = 0; i < vr.floquet->multipliers.size(); ++i) prod *= vr.floquet->multipliers[i];
      liou = std::abs(prod.real() - std::exp(integral)) / std::exp(integral);
      for (const auto& s : vr.report->samples) {
        if (project(*vr.frames, vr.report->points[static_cast<std::size_t>(s.point)]).distance > vr.rho) ++basin;
      }
      v_ok = trivial < 1e-4 && liou < 1e-6 && vr.report->violations.empty() && basin >= 500;
    }
    bistable_cert = std::move(b);
    vdp_cert = std::move(v);
    return Outcome{b_ok && v_ok, "bistable lambda1 " + fmt(br.nh.lambda1) + " lambda2 " + fmt(br.nh.lambda2) +
                                     (br.success ? " certified" : " failed: " + br.error) + "; vdp |mu-1| " + fmt(trivial) +
                                     ", product vs Liouville rel " + fmt(liou) + ", " +
                                     (vr.report ? std::to_string(vr.report->violations.size()) : std::string("-")) +
                                     " violations over " + std::to_string(basin) + " basin samples, tube c " + fmt(vr.c) +
                                     (vr.success ? "" : " failed: " + vr.error)};
  });

  failed += !criterion(6, "saddle obstruction", 10.0, [] {
    const auto ob = saddle_obstruction(builtins::saddle2(), vec({0, 0}), Cone::positive_orthant(2), 5.0);
    const auto rep = check_diff_positivity(builtins::saddle2(), ConeField::constant(Cone::positive_orthant(2)),
                                           Sampler{make_box(vec({-1, -1}), vec({1, 1})), 30, 3}, {1.0, 2.0, 4.0});
    const bool strict_fails = rep.strict_failures > 0 && !rep.t_used;
    return Outcome{ob.slope >= -1e-3 && strict_fails, "Hilbert slope " + fmt(ob.slope) + " over [0,5], " +
                                                          std::to_string(rep.strict_failures) + " strict failures, " +
                                                          std::to_string(rep.violations.size()) + " invariance violations"};
  });

  failed += !criterion(7, "PF consistency on the cycle", 60.0, [] {
    if (!vdp_cert || !vdp_cert->result.field) return Outcome{false, "no certified Van der Pol field"};
    const auto vdp = builtins::vdp();
    const auto& field = *vdp_cert->result.field;
    double worst = 0.0, s_min = kInf;
    int n = 0;
    for (const auto& p : attractor_points(vdp, vdp_cert->model, 10)) {
      const auto est = pf_vector(vdp, field, p.x, 20.0);
      worst = std::max(worst, hilbert_distance(field(p.x), est.w, vdp.field(p.x).normalized()));
      s_min = std::min(s_min, est.s_used);
      ++n;
    }
    return Outcome{n == 10 && worst < 1e-3 && s_min >= 20.0, std::to_string(n) + " orbit points, max h(w, f/|f|) " + fmt(worst) +
                                                                  ", min s " + fmt(s_min) + " (certified field reused)"};
  });

  failed += !criterion(8, "dichotomy classifier", 60.0, [] {
    if (!bistable_cert || !vdp_cert || !bistable_cert->result.field || !vdp_cert->result.field) {
      return Outcome{false, "missing certified fields"};
    }
    const auto b = dichotomy_classify(builtins::bistable4(), *bistable_cert->result.field, vec({0.6, 0.5}), 20.0);
    const auto v = dichotomy_classify(builtins::vdp(), *vdp_cert->result.field, vec({0.5, 0.5}), 20.0);
    const auto s = dichotomy_classify(builtins::saddle2(), ConeField::constant(Cone::positive_orthant(2)), vec({0.0, 1.0}), 5.0);
    const bool ok = b.verdict == DichotomyVerdict::kAlignedAttractor && v.verdict == DichotomyVerdict::kAlignedAttractor &&
                    s.verdict != DichotomyVerdict::kAlignedAttractor;
    return Outcome{ok, "bistable " + to_string(b.verdict) + ", vdp " + to_string(v.verdict) + ", saddle2/orthant " +
                           to_string(s.verdict) + " (certified fields reused)"};
  });

  std::printf("%d of 8 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
