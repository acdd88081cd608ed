#include "diffpos/cones.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace diffpos {

namespace {

// Relative slack for "argument lies in K" checks on gauge inputs.
constexpr double kMemberTol = 1e-9;

Matrix normalize_rows(const Matrix& a) {
  Matrix out = a;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n == 0.0) throw Error("cones.degenerate", "zero constraint row");
    out.row(i) /= n;
  }
  return out;
}

void check_vector(const Cone& cone, const Vector& d, const char* what) {
  if (d.size() != cone.dim()) throw Error("cones.dimension", std::string(what) + " has wrong dimension");
  if (!d.allFinite()) throw Error("cones.nonfinite", std::string(what) + " not finite");
  const double n = d.norm();
  if (n == 0.0) throw Error("cones.zero_vector", std::string(what) + " is zero");
  if (cone.margin(d) < -kMemberTol * n) throw Error("cones.not_in_cone", std::string(what) + " is not in the cone");
}

bool collinear(const Vector& a, const Vector& b) {
  return (a / a.norm() - b / b.norm()).norm() < 1e-13;
}

// Extreme rays of a pointed polyhedral cone {A d >= 0} by enumerating
// (dim-1)-subsets of active rows. Returned with the index sets of active rows.
struct ExtremeRay {
  Vector ray;
  std::vector<int> active;
};

std::vector<ExtremeRay> extreme_rays(const Matrix& a) {
  const int m = static_cast<int>(a.rows());
  const int n = static_cast<int>(a.cols());
  std::vector<ExtremeRay> out;
  // Lexicographic enumeration of combinations.
  std::vector<bool> mask(static_cast<std::size_t>(m), false);
  std::fill(mask.begin(), mask.begin() + (n - 1), true);
  do {
    Matrix sub(n - 1, n);
    int r = 0;
    for (int i = 0; i < m; ++i) {
      if (mask[static_cast<std::size_t>(i)]) sub.row(r++) = a.row(i);
    }
    Eigen::FullPivLU<Matrix> lu(sub);
    if (lu.rank() != n - 1) continue;
    Vector ray = lu.kernel().col(0);
    ray.normalize();
    const Vector ar = a * ray;
    if (ar.minCoeff() < -1e-12) {
      ray = -ray;
      if ((-ar).minCoeff() < -1e-12) continue;
    }
    bool dup = false;
    for (const auto& e : out) dup = dup || (e.ray - ray).norm() < 1e-10;
    if (dup) continue;
    ExtremeRay e{ray, {}};
    const Vector act = a * ray;
    for (int i = 0; i < m; ++i) {
      if (std::abs(act[i]) < 1e-12) e.active.push_back(i);
    }
    out.push_back(std::move(e));
  } while (std::prev_permutation(mask.begin(), mask.end()));
  return out;
}

}  // namespace

std::string to_string(ConeKind kind) {
  switch (kind) {
    case ConeKind::kOrthant:
      return "orthant";
    case ConeKind::kPolyhedral:
      return "polyhedral";
    case ConeKind::kElliptical:
      return "elliptical";
  }
  return "unknown";
}

Cone Cone::orthant(const Vector& signs) {
  if (signs.size() < 1) throw Error("cones.dimension", "empty sign vector");
  Cone c;
  c.kind_ = ConeKind::kOrthant;
  c.dim_ = static_cast<int>(signs.size());
  c.signs_ = signs;
  for (Eigen::Index i = 0; i < signs.size(); ++i) {
    if (signs[i] != 1.0 && signs[i] != -1.0) throw Error("cones.degenerate", "orthant signs must be +1 or -1");
  }
  return c;
}

Cone Cone::positive_orthant(int dim) { return orthant(Vector::Ones(dim)); }

Cone Cone::polyhedral(const Matrix& normals) {
  const int n = static_cast<int>(normals.cols());
  if (n < 1 || normals.rows() < n) throw Error("cones.degenerate", "polyhedral cone needs at least dim rows");
  if (!normals.allFinite()) throw Error("cones.nonfinite", "constraint rows not finite");
  Cone c;
  c.kind_ = ConeKind::kPolyhedral;
  c.dim_ = n;
  c.normals_ = normalize_rows(normals);
  if (Eigen::FullPivLU<Matrix>(c.normals_).rank() != n) throw Error("cones.degenerate", "constraint rows lack full rank");
  return c;
}

Cone Cone::elliptical(const Vector& axis, const Matrix& normal_basis, const Matrix& weight, double sigma) {
  const int n = static_cast<int>(axis.size());
  if (n < 2) throw Error("cones.dimension", "elliptical cones need dim >= 2");
  if (normal_basis.rows() != n || normal_basis.cols() != n - 1) throw Error("cones.dimension", "normal basis must be dim x (dim-1)");
  if (weight.rows() != n - 1 || weight.cols() != n - 1) throw Error("cones.dimension", "weight must be (dim-1) x (dim-1)");
  if (!(sigma > 0.0 && sigma <= 1.0)) throw Error("cones.degenerate", "shrink factor must lie in (0, 1]");
  const double an = axis.norm();
  if (!(an > 0.0) || !std::isfinite(an)) throw Error("cones.degenerate", "axis must be nonzero");
  Cone c;
  c.kind_ = ConeKind::kElliptical;
  c.dim_ = n;
  c.axis_ = axis / an;
  c.basis_n_ = normal_basis;
  // d = alpha axis + N v = (alpha |axis|) axis_hat + N v, so the weight picks up |axis|^2.
  c.weight_ = 0.5 * (weight + weight.transpose()) * (an * an);
  c.sigma_ = sigma;
  c.finish_elliptical();
  return c;
}

Cone Cone::elliptical(const Vector& axis, const Matrix& weight, double sigma) {
  const int n = static_cast<int>(axis.size());
  if (n < 2) throw Error("cones.dimension", "elliptical cones need dim >= 2");
  // Orthonormal complement: trailing columns of a full QR of the axis.
  const Matrix q = Eigen::HouseholderQR<Matrix>(axis).householderQ();
  return elliptical(axis, q.rightCols(n - 1), weight, sigma);
}

void Cone::finish_elliptical() {
  Matrix frame(dim_, dim_);
  frame.col(0) = axis_;
  frame.rightCols(dim_ - 1) = basis_n_;
  Eigen::FullPivLU<Matrix> lu(frame);
  if (lu.rank() != dim_) throw Error("cones.degenerate", "normal basis does not complement the axis");
  frame_inv_ = lu.inverse();
  Eigen::LLT<Matrix> llt(weight_);
  if (llt.info() != Eigen::Success || !weight_.allFinite()) throw Error("cones.degenerate", "weight is not SPD");
  weight_chol_ = llt.matrixL();
}

Matrix Cone::normals() const {
  if (kind_ == ConeKind::kOrthant) return signs_.asDiagonal();
  if (kind_ == ConeKind::kPolyhedral) return normals_;
  throw Error("cones.unsupported", "elliptical cones have no constraint rows");
}

Vector Cone::frame_coords(const Vector& d) const {
  if (kind_ != ConeKind::kElliptical) throw Error("cones.unsupported", "frame coordinates need an elliptical cone");
  return frame_inv_ * d;
}

double Cone::margin(const Vector& d) const {
  switch (kind_) {
    case ConeKind::kOrthant:
      return signs_.cwiseProduct(d).minCoeff();
    case ConeKind::kPolyhedral:
      return (normals_ * d).minCoeff();
    case ConeKind::kElliptical: {
      const Vector c = frame_inv_ * d;
      const Vector u = weight_chol_.transpose() * c.tail(dim_ - 1);
      return sigma_ * c[0] - u.norm();
    }
  }
  return 0.0;
}

Gauges gauges(const Cone& cone, const Vector& dx, const Vector& dy) {
  check_vector(cone, dx, "dx");
  check_vector(cone, dy, "dy");
  if (cone.kind() != ConeKind::kElliptical) {
    const Matrix a = cone.normals();
    const Vector ax = (a * dx).cwiseMax(0.0);
    const Vector ay = (a * dy).cwiseMax(0.0);
    double big = 0.0, small = kInf;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      if (ay[i] > 0.0) {
        const double r = ax[i] / ay[i];
        big = std::max(big, r);
        small = std::min(small, r);
      } else if (ax[i] > 0.0) {
        big = kInf;
      }
    }
    return {big, small};
  }

  // Elliptical: lambda dy - dx on the boundary solves
  //   a l^2 - 2 beta l + c = 0,  a = s^2 ay^2 - |wy|^2,  c = s^2 ax^2 - |wx|^2,
  // beta = s^2 ax ay - <wx, wy>, in W-orthonormal coordinates w = L^T v. The
  // discriminant is rewritten with the Lagrange identity to avoid cancellation
  // near collinear pairs.
  const double s = cone.sigma();
  const int n = cone.dim();
  const Vector cx = cone.frame_coords(dx), cy = cone.frame_coords(dy);
  const Matrix lt = cone.weight_factor().transpose();
  const Vector ux = lt * cx.tail(n - 1), uy = lt * cy.tail(n - 1);
  const double ax = cx[0], ay = cy[0];
  const double nx = ux.norm(), ny = uy.norm();
  const double a = std::max(0.0, (s * ay - ny) * (s * ay + ny));
  const double c = std::max(0.0, (s * ax - nx) * (s * ax + nx));
  const double beta = s * s * ax * ay - ux.dot(uy);
  double wedge = 0.0;
  for (int i = 0; i < n - 1; ++i) {
    for (int j = i + 1; j < n - 1; ++j) {
      const double t = ux[i] * uy[j] - ux[j] * uy[i];
      wedge += t * t;
    }
  }
  const double disc = std::max(0.0, s * s * (ay * ux - ax * uy).squaredNorm() - wedge);
  const double root = beta + std::sqrt(disc);

  if (collinear(dx, dy)) {
    const double r = ax / ay;
    return {r, r};
  }
  if (a <= 0.0) return {kInf, root > 0.0 ? c / root : 0.0};
  if (c <= 0.0) return {root / a, 0.0};
  return {root / a, c / root};
}

Gauges gauges_bisection(const Cone& cone, const Vector& dx, const Vector& dy) {
  check_vector(cone, dx, "dx");
  check_vector(cone, dy, "dy");
  auto refine = [&](double lo, double hi, auto feasible_hi) {
    for (int it = 0; it < 400 && hi - lo > 1e-16 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (feasible_hi(mid)) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    return 0.5 * (lo + hi);
  };

  // M: smallest l with l dy - dx in K. The feasible set is [M, inf).
  auto m_feasible = [&](double lam) { return cone.margin(lam * dy - dx) >= 0.0; };
  double lo = 0.0, hi = 1.0;
  double big;
  while (!m_feasible(hi) && hi < 1e300) {
    lo = hi;
    hi *= 2.0;
  }
  big = m_feasible(hi) ? refine(lo, hi, m_feasible) : kInf;

  // m: largest l with dx - l dy in K. The feasible set is [0, m].
  auto infeasible = [&](double lam) { return cone.margin(dx - lam * dy) < 0.0; };
  lo = 0.0;
  hi = 1.0;
  while (!infeasible(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw Error("cones.degenerate", "cone is not pointed along dy");
  }
  const double small = refine(lo, hi, infeasible);
  return {big, small};
}

double hilbert_distance(const Cone& cone, const Vector& dx, const Vector& dy) {
  const Gauges g = gauges(cone, dx, dy);
  if (!std::isfinite(g.big_m) || g.small_m <= 0.0) return kInf;
  return std::max(0.0, std::log(g.big_m / g.small_m));
}

std::vector<Vector> boundary_rays(const Cone& cone, int k) {
  const int n = cone.dim();
  if (k < 2) throw Error("cones.rays", "need at least two boundary rays");
  std::vector<Vector> out;
  if (cone.kind() == ConeKind::kElliptical) {
    const Matrix lt = cone.weight_factor().transpose();
    auto ray_for = [&](const Vector& unit) {
      // v = sigma L^{-T} u gives |v|_W = sigma |u| = sigma with alpha = 1.
      const Vector v = cone.sigma() * lt.triangularView<Eigen::Upper>().solve(unit);
      Vector d = cone.axis() + cone.normal_basis() * v;
      return Vector(d / d.norm());
    };
    if (n == 2) {
      out.push_back(ray_for(Vector::Constant(1, 1.0)));
      out.push_back(ray_for(Vector::Constant(1, -1.0)));
    } else if (n == 3) {
      for (int j = 0; j < k; ++j) {
        const double th = 2.0 * std::numbers::pi * j / k;
        Vector u(2);
        u << std::cos(th), std::sin(th);
        out.push_back(ray_for(u));
      }
    } else {
      std::mt19937_64 rng(12345);
      std::normal_distribution<double> g;
      for (int j = 0; j < k; ++j) {
        Vector u(n - 1);
        for (int i = 0; i < n - 1; ++i) u[i] = g(rng);
        out.push_back(ray_for(u / u.norm()));
      }
    }
    return out;
  }

  const Matrix a = cone.normals();
  const auto extremes = extreme_rays(a);
  for (const auto& e : extremes) out.push_back(e.ray);
  if (n >= 3) {
    for (std::size_t i = 0; i < extremes.size() && static_cast<int>(out.size()) < k; ++i) {
      for (std::size_t j = i + 1; j < extremes.size() && static_cast<int>(out.size()) < k; ++j) {
        bool share = false;
        for (int r : extremes[i].active) {
          share = share || std::find(extremes[j].active.begin(), extremes[j].active.end(), r) != extremes[j].active.end();
        }
        if (!share) continue;
        Vector mid = extremes[i].ray + extremes[j].ray;
        out.push_back(mid / mid.norm());
      }
    }
  }
  return out;
}

Cone shrink(const Cone& cone, double eps) {
  if (!(eps >= 0.0 && eps < 1.0)) throw Error("cones.degenerate", "shrink amount must lie in [0, 1)");
  if (cone.kind() == ConeKind::kElliptical) {
    return Cone::elliptical(cone.axis(), cone.normal_basis(), cone.weight(), cone.sigma() * (1.0 - eps));
  }
  if (eps == 0.0) return cone;
  const Matrix a = cone.normals();
  const Eigen::RowVectorXd mean = a.colwise().mean();
  Matrix shrunk = a;
  for (Eigen::Index i = 0; i < a.rows(); ++i) shrunk.row(i) -= eps * mean;
  return Cone::polyhedral(shrunk);
}

double condition_number(const Matrix& g) {
  Eigen::JacobiSVD<Matrix> svd(g);
  const Vector sv = svd.singularValues();
  const double lo = sv[sv.size() - 1];
  return lo > 0.0 ? sv[0] / lo : kInf;
}

Cone transport(const Cone& cone, const Matrix& g, double* condition) {
  const int n = cone.dim();
  if (g.rows() != n || g.cols() != n) throw Error("cones.dimension", "map has wrong shape");
  if (!g.allFinite()) throw Error("cones.nonfinite", "map not finite");
  const double cond = condition_number(g);
  if (condition) *condition = cond;
  if (!(cond <= 1e14)) throw Error("cones.singular_map", "transport map is singular (cond " + std::to_string(cond) + ")");

  if (cone.kind() == ConeKind::kOrthant) {
    const Matrix off = g - Matrix(g.diagonal().asDiagonal());
    if (off.cwiseAbs().maxCoeff() == 0.0) {
      Vector s = cone.signs();
      for (int i = 0; i < n; ++i) s[i] *= g(i, i) > 0.0 ? 1.0 : -1.0;
      return Cone::orthant(s);
    }
  }
  if (cone.kind() != ConeKind::kElliptical) {
    // A G^{-1} = (G^{-T} A^T)^T
    const Matrix rows = g.transpose().partialPivLu().solve(cone.normals().transpose()).transpose();
    return Cone::polyhedral(rows);
  }

  const Vector gx = g * cone.axis();
  const double scale = gx.norm();
  const Matrix gn = g * cone.normal_basis();
  Eigen::HouseholderQR<Matrix> qr(gn);
  const Matrix q = qr.householderQ() * Matrix::Identity(n, n - 1);
  const Matrix r = qr.matrixQR().topRows(n - 1).triangularView<Eigen::Upper>();
  // v_new = R v, so |v|_W = |R^{-1} v_new|_W.
  const Matrix rinv = r.triangularView<Eigen::Upper>().solve(Matrix::Identity(n - 1, n - 1));
  const Matrix w = scale * scale * rinv.transpose() * cone.weight() * rinv;
  return Cone::elliptical(gx / scale, q, w, cone.sigma());
}

Cone pull_back(const Cone& cone, const Matrix& phi, double* condition) {
  const int n = cone.dim();
  if (phi.rows() != n || phi.cols() != n) throw Error("cones.dimension", "map has wrong shape");
  if (cone.kind() != ConeKind::kElliptical) {
    const double cond = condition_number(phi);
    if (condition) *condition = cond;
    if (!(cond <= 1e14)) throw Error("cones.singular_map", "pull-back map is singular");
    return Cone::polyhedral(cone.normals() * phi);
  }
  const Matrix inv = phi.partialPivLu().inverse();
  return transport(cone, inv, condition);
}

ConeField ConeField::constant(Cone cone) {
  ConeField f;
  f.kind_ = Kind::kConstant;
  f.label_ = "constant " + to_string(cone.kind());
  f.eval_ = [cone = std::move(cone)](const Vector&) { return cone; };
  return f;
}

ConeField ConeField::tabulated(std::vector<Vector> points, std::vector<Cone> cones) {
  if (points.empty() || points.size() != cones.size()) throw Error("cones.dimension", "tabulated field needs one cone per point");
  ConeField f;
  f.kind_ = Kind::kTabulated;
  f.label_ = "tabulated";
  f.eval_ = [points = std::move(points), cones = std::move(cones)](const Vector& x) {
    std::size_t best = 0;
    double bd = kInf;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double d = (points[i] - x).squaredNorm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    return cones[best];
  };
  return f;
}

ConeField ConeField::anchored(std::function<Cone(const Vector&)> eval, std::string label) {
  ConeField f;
  f.kind_ = Kind::kAttractorAnchored;
  f.label_ = std::move(label);
  f.eval_ = std::move(eval);
  return f;
}

}  // namespace diffpos
