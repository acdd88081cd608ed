#include "doctest.h"

#include <cmath>
#include <random>

#include "diffpos/construct.hpp"

using namespace diffpos;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

struct Bistable {
  SystemDef sys = builtins::bistable4();
  AttractorModel model;
  NHCertificate cert;
  AttractorFrames frames;
};

const Bistable& bistable() {
  static const Bistable b = [] {
    Bistable o;
    const Box box = make_box(vec({-2, -1}), vec({2, 1}));
    o.model = fixed_point_model(o.sys, find_fixed_points(o.sys, grid_seeds(box, 9), box));
    o.cert = verify_normal_hyperbolicity(o.sys, o.model, 5.0);
    o.frames = adapted_metric(o.sys, o.model, o.cert, 5.0, 0.06);
    return o;
  }();
  return b;
}

struct Vdp {
  SystemDef sys = builtins::vdp();
  AttractorModel model;
  NHCertificate cert;
  std::optional<TubeField> tube;
};

const Vdp& vdp() {
  static const Vdp v = [] {
    Vdp o;
    o.model = cycle_model(find_limit_cycle(o.sys, vec({2.0, 0.0})));
    o.cert = verify_normal_hyperbolicity(o.sys, o.model, 10.0);
    // Requested radius 0.2, halved while the tube cones fail sampled positivity.
    for (double c = 0.2; c > 0.01 && !o.tube; c *= 0.5) {
      TubeField t = tube_extension(o.sys, adapted_metric(o.sys, o.model, o.cert, 5.0, c / 5), c);
      const auto rep = validate_tube(t, {1.0, 2.0, 4.0}, 0.1, 100, 14);
      if (rep.violations.empty() && rep.failures.empty()) o.tube = std::move(t);
    }
    REQUIRE(o.tube);
    return o;
  }();
  return v;
}

// Distance to the segment [-1, 1] x {0}.
double bistable_distance(const Vector& y) {
  const double dx = std::max(0.0, std::abs(y[0]) - 1.0);
  return std::hypot(dx, y[1]);
}

}  // namespace

TEST_CASE("tangent weight at a node is the closed-form integral") {
  const auto& b = bistable();
  const Matrix n = vec({0, 1});
  const auto w = adapted_norms(b.sys, vec({1, 0}), vec({1, 0}), n, 4.0, 2.0, 5.0);
  CHECK(w.tangent_weight == doctest::Approx(5.0).epsilon(1e-8));
  CHECK(w.w_star(0, 0) == doctest::Approx(5.0).epsilon(1e-6));
}

TEST_CASE("normal one-step contraction in the adapted metric") {
  const auto& b = bistable();
  for (const auto& piece : b.frames.pieces) {
    for (std::size_t i = 0; i < piece.size(); i += 3) {
      const Frame& f = piece[i];
      const auto fm = flow_map(b.sys, f.x, 1.0);
      const Vector img = fm.phi * f.n.col(0);
      const Matrix ny = img.normalized();
      const auto wy = adapted_norms(b.sys, fm.x, f.xi, ny, b.frames.lambda1, b.frames.lambda2, b.frames.t_int);
      const double after = img.norm() * std::sqrt(wy.w_star(0, 0));
      const double before = std::sqrt(f.w_star(0, 0));
      CHECK(after / before <= std::exp(-4.0) * (1 + 1e-3));
    }
  }
}

TEST_CASE("frames are continuous and consistently oriented") {
  const auto& b = bistable();
  for (const auto& piece : b.frames.pieces) {
    for (std::size_t i = 1; i < piece.size(); ++i) {
      CHECK(piece[i].xi.dot(piece[i - 1].xi) > 0.0);
      CHECK((piece[i].x - piece[i - 1].x).norm() <= 0.06 + 1e-12);
    }
    for (const auto& f : piece) CHECK(f.xi[0] > 0.99);
  }
}

TEST_CASE("negative certificate is rejected") {
  CycleOptions o;
  o.t_burn = 0.0;
  const auto sys = builtins::rot2();
  const auto model = cycle_model(find_limit_cycle(sys, vec({1.0, 0.0}), std::nullopt, o));
  const auto cert = verify_normal_hyperbolicity(sys, model, 10.0);
  REQUIRE_FALSE(cert.verdict);
  CHECK_THROWS_WITH_AS(adapted_metric(sys, model, cert, 5.0, 0.05), doctest::Contains("certificate_negative"), Error);
}

TEST_CASE("attractor cone field of the bistable system") {
  const auto& b = bistable();
  const auto k = attractor_cone_field(b.frames, 0.1);
  const Cone at = k(vec({1, 0}));
  // {a e1 + v e2 : a >= |v| w*}, w* = sqrt(W*) / tangent weight = sqrt(5) / 5.
  const double wstar = std::sqrt(5.0) / 5.0;
  CHECK(at.contains(vec({1.0, 1.0 / wstar * (1 - 1e-6)})));
  CHECK_FALSE(at.contains(vec({1.0, 1.0 / wstar * (1 + 1e-6)})));
  CHECK(std::abs(at.margin(vec({wstar, 1.0}).normalized())) < 1e-6);
  CHECK_THROWS_AS(attractor_cone_field(b.frames, 1.0), Error);
  CHECK_THROWS_AS(attractor_cone_field(b.frames, 0.0), Error);

  // Strict field tends to K as eps -> 0.
  const Vector d = vec({1.0, 1.5}).normalized();
  double prev = kInf;
  for (double eps : {0.1, 0.01, 0.001, 1e-4}) {
    const double gap = std::abs(k.strict(vec({0.5, 0}), eps).margin(d) - k(vec({0.5, 0})).margin(d));
    CHECK(gap < prev);
    prev = gap;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("attractor cones are pointed") {
  const auto& b = bistable();
  const auto k = attractor_cone_field(b.frames, 0.1);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (const Vector& x : {vec({-1, 0}), vec({0, 0}), vec({0.4, 0}), vec({1, 0})}) {
    const Cone c = k(x);
    for (int i = 0; i < 250; ++i) {
      const Vector d = vec({g(rng), g(rng)});
      CHECK_FALSE((c.contains(d, 1e-12) && c.contains(-d, 1e-12)));
    }
  }
}

TEST_CASE("tightened cones are nested") {
  const auto& b = bistable();
  const Cone k = attractor_cone_field(b.frames, 0.1)(vec({0.7, 0}));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double rho : {0.0, 0.5, 2.0}) {
    const Cone outer = tighten(k, rho), inner = tighten(k, rho + 0.3);
    const auto rays = boundary_rays(inner, 2);
    for (int i = 0; i < 200; ++i) {
      const double s = u(rng);
      const Vector d = s * rays[0] + (1 - s) * rays[1];
      CHECK(outer.margin(d.normalized()) > 0.0);
    }
  }
}

TEST_CASE("bistable tube is forward invariant") {
  const auto& b = bistable();
  const auto tube = tube_extension(b.sys, b.frames, 0.3);
  CHECK(tube.rho() >= 0.1);
  CHECK(tube.rho() < 0.3);
  const auto starts = sample_points(Sampler{make_box(vec({-1.3, -0.3}), vec({1.3, 0.3})), 400, 3});
  int used = 0;
  for (const auto& y0 : starts) {
    if (bistable_distance(y0) > tube.rho()) continue;
    ++used;
    const auto seg = flow(b.sys, y0, 10.0);
    for (const auto& y : seg.states) CHECK(bistable_distance(y) <= 0.3);
  }
  CHECK(used > 50);
  // Projection distance agrees with the closed form.
  for (const auto& y : starts) CHECK(tube.distance(y) == doctest::Approx(bistable_distance(y)).epsilon(1e-12));
}

TEST_CASE("tube cones vary continuously and approach the attractor field") {
  const auto& b = bistable();
  const auto tube = tube_extension(b.sys, b.frames, 0.3);
  const auto k = attractor_cone_field(b.frames, 0.1);
  const Vector d = vec({1.0, 0.8}).normalized();
  for (double x1 : {-0.8, 0.3, 0.95}) {
    const Vector p = vec({x1, 0});
    double prev = kInf;
    for (double h : {0.1, 0.01, 0.001}) {
      const double gap = std::abs(tube.cone(p + vec({0, h})).margin(d) - k(p).margin(d));
      CHECK(gap <= prev);
      prev = gap;
    }
    CHECK(prev < 1e-2);
    // Along the attractor direction the weight changes by O(distance).
    const double w0 = tube.cone(p).weight()(0, 0);
    const double w1 = tube.cone(p + vec({1e-3, 0})).weight()(0, 0);
    const double w2 = tube.cone(p + vec({1e-4, 0})).weight()(0, 0);
    CHECK(std::abs(w2 - w0) <= 0.2 * std::abs(w1 - w0) + 1e-15);
  }
}

TEST_CASE("Van der Pol tube passes sampled positivity at a long horizon") {
  const auto& v = vdp();
  CHECK(v.tube->rho() > 0.0);
  CHECK(v.tube->rho() < v.tube->c());
  CHECK(v.tube->c() <= 0.2);
  const auto rep = validate_tube(*v.tube, {4.0}, 0.1, 150, 21);
  CHECK(rep.samples.size() == 300);
  CHECK(rep.violations.empty());
  CHECK(rep.failures.empty());
}

TEST_CASE("basin field inside the tube is the tube field") {
  const auto& b = bistable();
  const auto tube = tube_extension(b.sys, b.frames, 0.3);
  const auto basin = basin_field(tube);
  const Vector x = vec({0.4, 0.05});
  const auto e = basin.evaluate(x);
  CHECK(e.tau == 0.0);
  const Cone t = tube.cone(x);
  CHECK((e.cone.axis() - t.axis()).norm() < 1e-15);
  CHECK((e.cone.weight() - t.weight()).norm() < 1e-15);
}

TEST_CASE("transported cone along a bistable trajectory") {
  const auto& b = bistable();
  const auto tube = tube_extension(b.sys, b.frames, 0.3);
  const auto basin = basin_field(tube);
  const Vector x = vec({2.0, 0.5});
  const auto e = basin.evaluate(x);
  CHECK(e.tau > 0.0);
  CHECK(std::isfinite(e.tau));
  CHECK(tube.distance(e.entry) == doctest::Approx(tube.rho()).epsilon(1e-8));
  const auto seg = flow(b.sys, x, 3.0);
  std::vector<Vector> pts;
  for (int i = 0; i < 10; ++i) pts.push_back(seg.state_at(0.3 * i));
  const auto rep = check_diff_positivity(b.sys, basin.field(), pts, {0.25, 1.0, 2.0});
  CHECK(rep.violations.empty());
  CHECK(rep.failures.empty());
}

TEST_CASE("entry time is consistent along trajectories") {
  const auto& v = vdp();
  const auto basin = basin_field(*v.tube);
  for (const Vector& x : {vec({0.05, 0.05}), vec({3.5, -3.0}), vec({-0.3, 0.2})}) {
    const auto e = basin.evaluate(x);
    REQUIRE(e.tau > 1.0);
    for (double t : {0.5, 1.0, 0.5 * e.tau}) {
      const auto y = flow(v.sys, x, t, BasinOptions{}.integ).final_state();
      CHECK(basin.evaluate(y).tau == doctest::Approx(e.tau - t).epsilon(1e-6));
    }
    // One-step inclusion of the transported cones.
    const auto fm = flow_map(v.sys, x, 1.0, BasinOptions{}.integ);
    const Cone ky = basin.evaluate(fm.x).cone;
    for (const auto& r : boundary_rays(e.cone, 2)) CHECK(ky.margin((fm.phi * r).normalized()) >= -1e-8);
  }
}

TEST_CASE("basin inclusions and strict contraction after the entry") {
  const auto& v = vdp();
  const auto basin = basin_field(*v.tube);
  const double eps = 0.1;
  const double eps_bar = -std::log(1 - eps);
  const auto pts = sample_points(Sampler{make_box(vec({-3, -3}), vec({3, 3})), 20, 4});
  for (const auto& x : pts) {
    const auto e = basin.evaluate(x);
    if (e.tau == 0.0) continue;
    for (double t : {0.5 * e.tau, e.tau, e.tau + 1.0}) {
      const auto fm = flow_map(v.sys, x, t, BasinOptions{}.integ);
      const Cone ky = basin.evaluate(fm.x).cone;
      for (const auto& r : boundary_rays(e.cone, 2)) CHECK(ky.margin((fm.phi * r).normalized()) >= -1e-8);
    }
    const auto fm = flow_map(v.sys, x, e.tau + eps_bar, BasinOptions{}.integ);
    const Cone r_cone = shrink(basin.evaluate(fm.x).cone, eps);
    for (const auto& r : boundary_rays(e.cone, 2)) CHECK(r_cone.margin((fm.phi * r).normalized()) > 0.0);
  }
}

TEST_CASE("end-to-end certificates") {
  CertifyParams p;
  p.sampler = Sampler{make_box(vec({-1.5, -1}), vec({1.5, 1})), 200, 1};
  const auto& b = bistable();
  const auto rb = certificate(b.sys, b.model, p);
  CHECK(rb.success);
  REQUIRE(rb.report);
  CHECK(rb.report->violations.empty());
  REQUIRE(rb.report->lambda_hat);
  CHECK(*rb.report->lambda_hat > 0.3);
  CHECK(rb.nh.lambda1 == doctest::Approx(4.0).epsilon(0.05));
  CHECK(rb.nh.lambda2 == doctest::Approx(2.0).epsilon(0.05));

  CycleOptions o;
  o.t_burn = 0.0;
  const auto rot = builtins::rot2();
  const auto rr = certificate(rot, cycle_model(find_limit_cycle(rot, vec({1.0, 0.0}), std::nullopt, o)), p);
  CHECK_FALSE(rr.success);
  CHECK(rr.stage == "nh");

  CertifyParams pv;
  pv.c = 0.2;
  pv.sampler = Sampler{make_box(vec({-3, -3}), vec({3, 3})), 200, 1};
  const auto& v = vdp();
  const auto rv = certificate(v.sys, v.model, pv);
  CHECK(rv.success);
  REQUIRE(rv.report);
  CHECK(rv.report->t_used.has_value());
  CHECK(rv.report->samples.size() >= 500);
  REQUIRE(rv.floquet);
  CHECK(std::abs(rv.floquet->multipliers[0] - 1.0) < 1e-4);

  // The verdict must not depend on where the horizon cuts the period.
  REQUIRE(rv.field);
  for (double h : {10.0, 17.0, 20.0, 40.0}) {
    CAPTURE(h);
    const auto d = dichotomy_classify(v.sys, *rv.field, vec({2.0, 0.0}), h);
    CHECK(d.verdict == DichotomyVerdict::kAlignedAttractor);
    CHECK(std::abs(d.growth_exponent) < 0.05);
  }
}
