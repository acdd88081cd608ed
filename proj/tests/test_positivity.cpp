#include "doctest.h"

#include <cmath>
#include <random>
#include <unsupported/Eigen/MatrixFunctions>

#include "diffpos/positivity.hpp"

using namespace diffpos;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double angle(const Vector& a, const Vector& b) {
  const double c = std::abs(a.dot(b)) / (a.norm() * b.norm());
  return std::acos(std::min(1.0, c));
}

// Dominant (largest real part) eigenvector by direct eigendecomposition.
Vector dominant_eigvec(const Matrix& a) {
  Eigen::EigenSolver<Matrix> es(a);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < es.eigenvalues().size(); ++i) {
    if (es.eigenvalues()[i].real() > es.eigenvalues()[best].real()) best = i;
  }
  Vector v = es.eigenvectors().col(best).real();
  v /= v.norm();
  return v.sum() < 0 ? Vector(-v) : v;
}

Matrix metzler() {
  Matrix a(2, 2);
  a << -1, 2, 1, -1;
  return a;
}

Cone unit_disc_cone() { return Cone::elliptical(vec({1, 0}), vec({0, 1}).reshaped(2, 1), Matrix::Identity(1, 1)); }

// Wide cone around (1,1) whose interior contains both coordinate axes.
Cone wide_cone() {
  return Cone::elliptical(vec({1, 1}), vec({1, -1}).reshaped(2, 1) / std::sqrt(2.0), 0.25 * Matrix::Identity(1, 1));
}

}  // namespace

TEST_CASE("linear power iteration examples") {
  Matrix a(2, 2);
  a << 2, 1, 1, 2;
  const Cone orth = Cone::positive_orthant(2);
  const auto r = linear_pf(a, orth, vec({1, 0}));
  CHECK(r.converged);
  CHECK(r.invariance_verified);
  CHECK(angle(r.v, dominant_eigvec(a)) < 1e-10);
  CHECK(r.v[0] == doctest::Approx(0.70711).epsilon(1e-5));

  const auto id = linear_pf(Matrix::Identity(2, 2), orth, vec({3, 4}));
  CHECK((id.v - vec({0.6, 0.8})).norm() < 1e-15);
  CHECK(id.converged);

  Matrix j(2, 2);
  j << 1, 1, 0, 1;
  // Explicit powers: J^n (0,1) = (n, 1), so the angle to e1 is atan(1/n).
  double prev = kInf;
  for (int iters : {10, 100, 1000}) {
    const auto jr = linear_pf(j, orth, vec({0, 1}), iters);
    const double ang = angle(jr.v, vec({1, 0}));
    CHECK(ang == doctest::Approx(std::atan(1.0 / iters)).epsilon(1e-8));
    CHECK(ang < prev);
    prev = ang;
  }

  Matrix rot(2, 2);
  rot << 0, -1, 1, 0;
  CHECK_THROWS_AS(linear_pf(rot, orth, vec({1, 0})), Error);
  CHECK_FALSE(linear_pf(metzler(), orth, vec({1, 1}), 1).invariance_verified);
  CHECK_THROWS_AS(linear_pf(Matrix::Zero(2, 2), orth, vec({1, 1})), Error);
}

TEST_CASE("metzler PF direction: power iteration on exp(A), pf_vector, eigen oracle") {
  const Vector oracle = dominant_eigvec(metzler());
  // Dominant eigenvalue sqrt2 - 1 with eigenvector (sqrt2, 1) / sqrt3.
  CHECK(angle(oracle, vec({std::sqrt(2.0), 1.0})) < 1e-12);
  const Matrix ea = metzler().exp();
  const auto lin = linear_pf(ea, Cone::positive_orthant(2), vec({1, 0}));
  CHECK(lin.invariance_verified);
  CHECK(angle(lin.v, oracle) < 1e-6);

  const auto sys = builtins::metzler2();
  const auto field = ConeField::constant(Cone::positive_orthant(2));
  for (const Vector& x : {vec({0.0, 0.0}), vec({0.1, -0.2}), vec({-0.05, 0.3})}) {
    const auto pf = pf_vector(sys, field, x, 5.0);
    CHECK(angle(pf.w, oracle) < 1e-6);
    CHECK(pf.residual < 1e-6);
    CHECK(pf.margin >= 0.0);
    CHECK(std::abs(pf.w.norm() - 1.0) < 1e-14);
  }
}

TEST_CASE("pf_vector agrees with linear power iteration on random Metzler systems") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> off(0.1, 2.0), diag(-2.0, 0.5);
  const auto field = ConeField::constant(Cone::positive_orthant(2));
  for (int trial = 0; trial < 6; ++trial) {
    Matrix a(2, 2);
    a << diag(rng), off(rng), off(rng), diag(rng);
    const auto pf = pf_vector(builtins::linear(a), field, vec({0.0, 0.0}), 5.0);
    const auto lin = linear_pf(a.exp(), Cone::positive_orthant(2), vec({1, 1}), 100000);
    CHECK(angle(pf.w, lin.v) < 1e-6);
  }
}

TEST_CASE("metzler contraction rate recovers the spectral gap") {
  std::vector<double> grid;
  for (int i = 0; i <= 30; ++i) grid.push_back(1.0 + 3.0 * i / 30);
  const auto fit = contraction_rate(builtins::metzler2(), ConeField::constant(Cone::positive_orthant(2)), vec({0.4, 0.1}),
                                    grid);
  const double gap = 2.0 * std::sqrt(2.0);
  CHECK(std::abs(fit.lambda - gap) < 0.1 * gap);
  CHECK(fit.used == 31);
}

TEST_CASE("linear saddle keeps the Hilbert distance of bracketing rays") {
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(0.25 * i);
  const auto fit = contraction_rate(builtins::saddle2(), ConeField::constant(Cone::positive_orthant(2)), vec({0, 0}), grid,
                                    std::make_pair(vec({1, 1}), vec({2, 1})));
  CHECK(std::abs(fit.slope) < 1e-6);
  for (double h : fit.h) CHECK(h == doctest::Approx(std::log(2.0)).epsilon(1e-7));
}

TEST_CASE("bistable box: constant elliptical cone is strictly invariant") {
  const auto sys = builtins::bistable4();
  const auto field = ConeField::constant(unit_disc_cone());
  const Sampler s{make_box(vec({-1.2, -1.0}), vec({1.2, 1.0})), 200, 7};
  const auto rep = check_diff_positivity(sys, field, s, {1.0, 2.0, 4.0});
  CHECK(rep.samples.size() >= 1000);
  CHECK(rep.violations.empty());
  CHECK(rep.failures.empty());
  REQUIRE(rep.t_used.has_value());
  CHECK(*rep.t_used <= 4.0);
  REQUIRE(rep.lambda_hat.has_value());
  CHECK(*rep.lambda_hat > 0.3);
  CHECK(rep.delta_hat > 0.0);

  // Soundness: twice the rays, half the tolerance, fresh points.
  PositivityOptions strict;
  strict.rays = 4;
  strict.tol = 0.5e-8;
  const auto again = check_diff_positivity(sys, field, Sampler{s.box, 100, 99}, {1.0, 2.0, 4.0}, strict);
  CHECK(again.violations.empty());
}

TEST_CASE("bistable beyond the certified box fails strictly") {
  const auto sys = builtins::bistable4();
  const auto field = ConeField::constant(unit_disc_cone());
  std::vector<Vector> pts = {vec({1.5, 0.0}), vec({-1.5, 0.3}), vec({1.5, -0.5})};
  const auto rep = check_diff_positivity(sys, field, pts, {0.05, 0.1, 0.2});
  CHECK(rep.strict_failures > 0);
  CHECK_FALSE(rep.violations.empty());
  CHECK_FALSE(rep.t_used.has_value());
}

TEST_CASE("linear saddle with the orthant: invariant but never strict") {
  const auto rep = check_diff_positivity(builtins::saddle2(), ConeField::constant(Cone::positive_orthant(2)),
                                         Sampler{make_box(vec({-1, -1}), vec({1, 1})), 30, 3}, {1.0, 2.0, 4.0});
  CHECK(rep.violations.empty());
  CHECK(rep.strict_failures > 0);
  CHECK_FALSE(rep.t_used.has_value());
}

TEST_CASE("horizons must increase") {
  const auto field = ConeField::constant(Cone::positive_orthant(2));
  CHECK_THROWS_AS(check_diff_positivity(builtins::saddle2(), field, std::vector<Vector>{vec({0, 0})}, {2.0, 1.0}), Error);
}

TEST_CASE("PF vector of the bistable system at the saddle") {
  const auto pf = pf_vector(builtins::bistable4(), ConeField::constant(unit_disc_cone()), vec({0, 0}), 5.0);
  CHECK(angle(pf.w, vec({1, 0})) < 1e-8);
  CHECK(pf.w[0] > 0.0);
}

TEST_CASE("backward blow-up is reported") {
  const auto sys = parse_field({"x1^2", "-x2"}, 2);
  PfOptions o;
  o.blowup = 1e3;
  // Backward from x1 = -1: x1(-s) = -1/(1-s) blows up at s = 1.
  CHECK_THROWS_AS(pf_vector(sys, ConeField::constant(Cone::positive_orthant(2)), vec({-1.0, 1.0}), 2.0, o), Error);
}

TEST_CASE("PF field is invariant as a field of rays") {
  const auto sys = builtins::bistable4();
  const auto field = ConeField::constant(unit_disc_cone());
  for (double x1 : {-0.8, -0.3, 0.2, 0.6, 0.95}) {
    const Vector x = vec({x1, 0.0});
    const auto w = pf_vector(sys, field, x, 5.0).w;
    for (double t : {0.5, 1.0, 2.0}) {
      const auto fm = flow_map(sys, x, t);
      const auto wt = pf_vector(sys, field, fm.x, 5.0).w;
      CHECK(hilbert_distance(field(fm.x), wt, fm.phi * w) < 1e-4);
    }
  }
  const auto mf = ConeField::constant(Cone::positive_orthant(2));
  const Vector x = vec({0.5, -0.2});
  const auto w = pf_vector(builtins::metzler2(), mf, x, 5.0).w;
  const auto fm = flow_map(builtins::metzler2(), x, 1.5);
  CHECK(hilbert_distance(mf(fm.x), pf_vector(builtins::metzler2(), mf, fm.x, 5.0).w, fm.phi * w) < 1e-4);
}

TEST_CASE("pushed rays converge monotonically to the PF direction") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  const auto mf = ConeField::constant(Cone::positive_orthant(2));
  const auto sys = builtins::metzler2();
  const Vector x = vec({0.2, 0.1});
  for (int trial = 0; trial < 10; ++trial) {
    const Vector d = vec({u(rng), u(rng)});
    double prev = kInf;
    for (int i = 0; i <= 20; ++i) {
      const double t = 0.2 * i;
      const auto fm = flow_map(sys, x, t);
      const auto w = pf_vector(sys, mf, fm.x, 5.0).w;
      const double h = hilbert_distance(mf(fm.x), w, fm.phi * d);
      CHECK(h <= prev + 1e-9);
      prev = h;
    }
  }
}

TEST_CASE("dichotomy classification") {
  SUBCASE("bistable converges aligned with the PF direction") {
    const auto rep = dichotomy_classify(builtins::bistable4(), ConeField::constant(unit_disc_cone()), vec({0.5, 0.3}), 20.0);
    CHECK(rep.verdict == DichotomyVerdict::kAlignedAttractor);
    CHECK(rep.alignment < 1e-3);
    CHECK(rep.growth_exponent <= 0.0);
  }
  SUBCASE("linear saddle from (0,1) is not aligned") {
    const auto rep =
        dichotomy_classify(builtins::saddle2(), ConeField::constant(Cone::positive_orthant(2)), vec({0.0, 1.0}), 5.0);
    CHECK(rep.verdict != DichotomyVerdict::kAlignedAttractor);
    CHECK(rep.growth_exponent == doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("unbounded trajectories are rejected") {
    CHECK_THROWS_AS(dichotomy_classify(builtins::saddle2(), ConeField::constant(Cone::positive_orthant(2)),
                                       vec({1.0, 0.0}), 20.0),
                    Error);
  }
}

TEST_CASE("saddle obstruction") {
  SUBCASE("linear saddle with the orthant is obstructed") {
    const auto rep = saddle_obstruction(builtins::saddle2(), vec({0, 0}), Cone::positive_orthant(2));
    CHECK((rep.ray1 - vec({1, 1})).norm() < 1e-12);
    CHECK((rep.ray2 - vec({2, 1})).norm() < 1e-12);
    // Componentwise ratios under diag(e^t, e^-t) keep h = log 2.
    for (double h : rep.h) CHECK(h == doctest::Approx(std::log(2.0)).epsilon(1e-7));
    CHECK(std::abs(rep.slope) < 1e-6);
    CHECK(rep.obstructed);
  }
  SUBCASE("stable node contracts inside a cone holding both eigen-directions") {
    Matrix a(2, 2);
    a << -1, 0, 0, -2;
    const auto rep = saddle_obstruction(builtins::linear(a), vec({0, 0}), wide_cone());
    CHECK_FALSE(rep.obstructed);
    CHECK(rep.slope < -0.5);
  }
  SUBCASE("diagonal flows are Hilbert isometries of the orthant") {
    Matrix a(2, 2);
    a << -1, 0, 0, -2;
    const auto rep = saddle_obstruction(builtins::linear(a), vec({0, 0}), Cone::positive_orthant(2));
    CHECK(rep.obstructed);
  }
  SUBCASE("bistable saddle is not obstructed in a wide cone") {
    const auto rep = saddle_obstruction(builtins::bistable4(), vec({0, 0}), wide_cone());
    CHECK(rep.eigenvalues[0] == doctest::Approx(1.0));
    CHECK(rep.eigenvalues[1] == doctest::Approx(-4.0));
    CHECK_FALSE(rep.obstructed);
  }
  SUBCASE("complex spectrum is an error") {
    CHECK_THROWS_AS(saddle_obstruction(builtins::vdp(), vec({0, 0}), wide_cone()), Error);
  }
}
