#pragma once

#include <functional>
#include <string>
#include <vector>

#include "diffpos/common.hpp"

namespace diffpos {

enum class ConeKind { kOrthant, kPolyhedral, kElliptical };

std::string to_string(ConeKind kind);

// A closed, solid, convex, pointed cone in R^dim.
//
//   Orthant     {d : s_i d_i >= 0}
//   Polyhedral  {d : A d >= 0}, rows of A stored with unit norm
//   Elliptical  {alpha xi + N v : alpha >= 0, sigma alpha >= sqrt(v^T W v)}
//
// For the elliptical variant xi is a unit vector and N a basis of a
// complement (orthonormal columns, not necessarily orthogonal to xi; see
// transport()). Cones are immutable values.
class Cone {
 public:
  static Cone orthant(const Vector& signs);
  static Cone positive_orthant(int dim);
  static Cone polyhedral(const Matrix& normals);
  static Cone elliptical(const Vector& axis, const Matrix& normal_basis, const Matrix& weight, double sigma = 1.0);
  // Elliptical cone with N the orthogonal complement of the axis.
  static Cone elliptical(const Vector& axis, const Matrix& weight, double sigma = 1.0);

  ConeKind kind() const noexcept { return kind_; }
  int dim() const noexcept { return dim_; }

  const Vector& signs() const { return signs_; }
  // Constraint rows; for an orthant, diag(signs).
  Matrix normals() const;
  const Vector& axis() const { return axis_; }
  const Matrix& normal_basis() const { return basis_n_; }
  const Matrix& weight() const { return weight_; }
  // Lower Cholesky factor L of the weight, W = L L^T.
  const Matrix& weight_factor() const { return weight_chol_; }
  double sigma() const noexcept { return sigma_; }

  // Coordinates (alpha, v) of d in the elliptical frame.
  Vector frame_coords(const Vector& d) const;

  // Signed margin: >= 0 iff d in K, exactly 0 on the boundary, positively
  // homogeneous of degree 1 and continuous in d.
  double margin(const Vector& d) const;
  bool contains(const Vector& d, double tol = 0.0) const { return margin(d) >= -tol; }

 private:
  Cone() = default;
  void finish_elliptical();

  ConeKind kind_ = ConeKind::kOrthant;
  int dim_ = 0;
  Vector signs_;
  Matrix normals_;
  Vector axis_;
  Matrix basis_n_;
  Matrix weight_;
  double sigma_ = 1.0;
  Matrix frame_inv_;  // [axis | N]^{-1}
  Matrix weight_chol_;  // lower factor L, W = L L^T
};

struct Gauges {
  double big_m;    // M = inf{l >= 0 : l dy - dx in K}, kInf when empty
  double small_m;  // m = sup{l >= 0 : dx - l dy in K}
};

// Closed-form gauges (ratio scan for polyhedral cones, quadratic roots for
// elliptical ones). Throws cones.not_in_cone when an argument lies outside K
// by more than a relative 1e-9, cones.zero_vector for zero input.
Gauges gauges(const Cone& cone, const Vector& dx, const Vector& dy);

// Reference gauges by bisection on membership, any variant.
Gauges gauges_bisection(const Cone& cone, const Vector& dx, const Vector& dy);

// Hilbert projective distance log(M/m), kInf when M = inf or m = 0.
double hilbert_distance(const Cone& cone, const Vector& dx, const Vector& dy);

// Unit vectors on the boundary. dim 2: the two extreme rays. Elliptical in
// dim >= 3: k rays on the ring sigma alpha = |v|_W. Polyhedral in dim >= 3:
// the extreme rays, then midpoints of extreme-ray pairs sharing a facet
// until k rays are collected.
std::vector<Vector> boundary_rays(const Cone& cone, int k);

// Strict subcone. Elliptical: sigma -> sigma (1 - eps). Polyhedral/orthant:
// each unit row a_i -> a_i - eps * mean_j(a_j).
Cone shrink(const Cone& cone, double eps);

// Image {G d : d in K}. Polyhedral rows become A G^{-1}; the elliptical axis
// becomes G xi / |G xi| and G N is re-orthonormalized by QR with W rewritten
// so that d in K  <=>  G d in transport(K, G) exactly. Throws
// cones.singular_map when cond(G) > 1e14.
Cone transport(const Cone& cone, const Matrix& g, double* condition = nullptr);

// Preimage {d : Phi d in K} = transport(K, Phi^{-1}), without forming the
// inverse for polyhedral cones.
Cone pull_back(const Cone& cone, const Matrix& phi, double* condition = nullptr);

// 2-norm condition number via SVD.
double condition_number(const Matrix& g);

// Assignment x -> K(x). Evaluators must be pure; the strict cone field is
// always shrink(K(x), eps).
class ConeField {
 public:
  enum class Kind { kConstant, kAttractorAnchored, kTabulated };

  static ConeField constant(Cone cone);
  static ConeField tabulated(std::vector<Vector> points, std::vector<Cone> cones);
  static ConeField anchored(std::function<Cone(const Vector&)> eval, std::string label);

  Kind kind() const noexcept { return kind_; }
  const std::string& label() const noexcept { return label_; }
  Cone operator()(const Vector& x) const { return eval_(x); }
  Cone strict(const Vector& x, double eps) const { return shrink(eval_(x), eps); }

 private:
  Kind kind_ = Kind::kConstant;
  std::string label_;
  std::function<Cone(const Vector&)> eval_;
};

}  // namespace diffpos
