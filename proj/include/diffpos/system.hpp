#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diffpos/common.hpp"

namespace diffpos {

using FieldFn = std::function<Vector(const Vector&)>;
using JacobianFn = std::function<Matrix(const Vector&)>;

// A smooth autonomous vector field x' = f(x) on R^dim. Immutable after
// construction; safe to share across threads as long as the callables are.
class SystemDef {
 public:
  SystemDef(std::string name, int dim, FieldFn field, std::optional<JacobianFn> jac = std::nullopt);

  const std::string& name() const noexcept { return name_; }
  int dim() const noexcept { return dim_; }
  bool has_analytic_jacobian() const noexcept { return jac_.has_value(); }

  // Evaluates f(x). Throws Error("dynsys.nonfinite") when the result is not finite.
  Vector field(const Vector& x) const;

  const FieldFn& field_fn() const noexcept { return field_; }
  const std::optional<JacobianFn>& jacobian_fn() const noexcept { return jac_; }

 private:
  std::string name_;
  int dim_;
  FieldFn field_;
  std::optional<JacobianFn> jac_;
};

// Builds a system from one expression per component (see expr.hpp for the
// grammar). The Jacobian falls back to central differences.
SystemDef parse_field(const std::vector<std::string>& exprs, int dim, std::string name = "custom");

// Analytic Jacobian when available, otherwise central differences with
// per-component step h_j = 1e-6 * max(1, |x_j|).
Matrix jacobian(const SystemDef& sys, const Vector& x);
Matrix finite_difference_jacobian(const SystemDef& sys, const Vector& x);

// Built-in test systems.
namespace builtins {

SystemDef linear(const Matrix& a, std::string name = "linear");
SystemDef metzler2();   // A = [[-1, 2], [1, -1]]
SystemDef bistable4();  // x1' = x1 - x1^3, x2' = -4 x2
SystemDef vdp(double mu = 1.0);
SystemDef saddle2();    // diag(1, -1)
SystemDef rot2();       // x1' = -x2, x2' = x1
SystemDef decay1();     // x' = -x

// Names accepted by by_name().
const std::vector<std::string>& names();
SystemDef by_name(const std::string& name);

}  // namespace builtins

}  // namespace diffpos
