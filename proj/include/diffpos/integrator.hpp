#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "diffpos/common.hpp"

namespace diffpos {

enum class StepMethod {
  kDormandPrince45,  // adaptive embedded 5(4) pair with 4th-order dense output
  kRk4,              // fixed step classical RK4, cubic Hermite dense output
};

struct IntegratorOptions {
  double abs_tol = 1e-9;
  double rel_tol = 1e-9;
  double initial_step = 0.0;  // 0 selects automatically
  double max_step = kInf;
  double min_step = 1e-13;  // relative to max(1, |t|)
  long max_steps = 2'000'000;
  double max_norm = 1e12;  // blow-up guard on the state components
  StepMethod method = StepMethod::kDormandPrince45;
  double fixed_step = 1e-3;  // kRk4 only
};

// y' = F(t, y), written into dy.
using Rhs = std::function<void(double t, const Vector& y, Vector& dy)>;

// Piecewise polynomial solution: one interpolant per accepted step.
class DenseSolution {
 public:
  const std::vector<double>& times() const noexcept { return times_; }
  const std::vector<Vector>& states() const noexcept { return states_; }
  double t_begin() const { return times_.front(); }
  double t_end() const { return times_.back(); }

  // Interpolated state at t (clamped to the integration span).
  Vector operator()(double t) const;

 private:
  friend class Integrator;
  struct Step {
    double t0;
    double h;
    Vector r1, r2, r3, r4, r5;
  };
  std::size_t locate(double t) const;

  std::vector<double> times_;
  std::vector<Vector> states_;
  std::vector<Step> steps_;
};

// Scalar event g(t, y) = 0 detected by sign change between accepted steps and
// refined by bisection on the dense output.
struct EventSpec {
  std::function<double(double, const Vector&)> g;
  int direction = 0;       // +1 rising only, -1 falling only, 0 both
  double ignore_until = 0; // |t - t0| below this is ignored (leaving a section)
  double time_tol = 1e-12;
};

struct EventHit {
  double t;
  Vector y;
};

class Integrator {
 public:
  explicit Integrator(IntegratorOptions opts = {}) : opts_(opts) {}

  // Integrates from t0 to t_end (which may be below t0). Only the first
  // `guard_components` entries of y (all when 0) enter the blow-up guard.
  // With an event, integration stops at the first hit and `hit` is filled.
  DenseSolution solve(const Rhs& rhs, double t0, const Vector& y0, double t_end, int guard_components = 0,
                      const EventSpec* event = nullptr, std::optional<EventHit>* hit = nullptr) const;

  const IntegratorOptions& options() const noexcept { return opts_; }

 private:
  IntegratorOptions opts_;
};

}  // namespace diffpos
