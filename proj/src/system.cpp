#include "diffpos/system.hpp"

#include <cmath>

#include "diffpos/expr.hpp"

namespace diffpos {

SystemDef::SystemDef(std::string name, int dim, FieldFn field, std::optional<JacobianFn> jac)
    : name_(std::move(name)), dim_(dim), field_(std::move(field)), jac_(std::move(jac)) {
  if (dim_ <= 0) throw Error("dynsys.dimension", "dimension must be positive");
  if (!field_) throw Error("dynsys.dimension", "missing vector field evaluator");
}

Vector SystemDef::field(const Vector& x) const {
  Vector fx = field_(x);
  if (fx.size() != dim_) throw Error("dynsys.dimension", "vector field returned wrong dimension");
  if (!fx.allFinite()) throw Error("dynsys.nonfinite", "vector field not finite at evaluation point");
  return fx;
}

SystemDef parse_field(const std::vector<std::string>& exprs, int dim, std::string name) {
  if (dim <= 0 || static_cast<int>(exprs.size()) != dim) {
    throw Error("dynsys.dimension", "expected " + std::to_string(dim) + " expressions, got " +
                                        std::to_string(exprs.size()));
  }
  std::vector<expr::Expression> compiled;
  compiled.reserve(exprs.size());
  for (const auto& e : exprs) compiled.push_back(expr::parse(e, dim));

  auto field = [compiled](const Vector& x) {
    Vector out(static_cast<Eigen::Index>(compiled.size()));
    const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
    for (std::size_t i = 0; i < compiled.size(); ++i) out[static_cast<Eigen::Index>(i)] = compiled[i].evaluate(xs);
    return out;
  };
  return SystemDef(std::move(name), dim, std::move(field));
}

Matrix finite_difference_jacobian(const SystemDef& sys, const Vector& x) {
  const int n = sys.dim();
  Matrix j(n, n);
  Vector xp = x;
  for (int c = 0; c < n; ++c) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[c]));
    xp[c] = x[c] + h;
    const Vector fp = sys.field(xp);
    xp[c] = x[c] - h;
    const Vector fm = sys.field(xp);
    xp[c] = x[c];
    j.col(c) = (fp - fm) / (2.0 * h);
  }
  return j;
}

Matrix jacobian(const SystemDef& sys, const Vector& x) {
  if (const auto& jac = sys.jacobian_fn()) return (*jac)(x);
  return finite_difference_jacobian(sys, x);
}

namespace builtins {

SystemDef linear(const Matrix& a, std::string name) {
  if (a.rows() != a.cols()) throw Error("dynsys.dimension", "linear system matrix must be square");
  return SystemDef(
      std::move(name), static_cast<int>(a.rows()), [a](const Vector& x) -> Vector { return a * x; },
      [a](const Vector&) -> Matrix { return a; });
}

SystemDef metzler2() {
  Matrix a(2, 2);
  a << -1.0, 2.0, 1.0, -1.0;
  return linear(a, "metzler2");
}

SystemDef bistable4() {
  return SystemDef(
      "bistable4", 2,
      [](const Vector& x) -> Vector {
        Vector f(2);
        f << x[0] - x[0] * x[0] * x[0], -4.0 * x[1];
        return f;
      },
      [](const Vector& x) -> Matrix {
        Matrix j(2, 2);
        j << 1.0 - 3.0 * x[0] * x[0], 0.0, 0.0, -4.0;
        return j;
      });
}

SystemDef vdp(double mu) {
  return SystemDef(
      "vdp", 2,
      [mu](const Vector& x) -> Vector {
        Vector f(2);
        f << x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
        return f;
      },
      [mu](const Vector& x) -> Matrix {
        Matrix j(2, 2);
        j << 0.0, 1.0, -2.0 * mu * x[0] * x[1] - 1.0, mu * (1.0 - x[0] * x[0]);
        return j;
      });
}

SystemDef saddle2() {
  Matrix a(2, 2);
  a << 1.0, 0.0, 0.0, -1.0;
  return linear(a, "saddle2");
}

SystemDef rot2() {
  Matrix a(2, 2);
  a << 0.0, -1.0, 1.0, 0.0;
  return linear(a, "rot2");
}

SystemDef decay1() {
  Matrix a(1, 1);
  a << -1.0;
  return linear(a, "decay1");
}

const std::vector<std::string>& names() {
  static const std::vector<std::string> kNames = {"metzler2", "bistable4", "vdp", "saddle2", "rot2"};
  return kNames;
}

SystemDef by_name(const std::string& name) {
  if (name == "metzler2") return metzler2();
  if (name == "bistable4") return bistable4();
  if (name == "vdp") return vdp();
  if (name == "saddle2") return saddle2();
  if (name == "rot2") return rot2();
  throw Error("cli.unknown_builtin", "unknown builtin system '" + name + "'");
}

}  // namespace builtins

}  // namespace diffpos
