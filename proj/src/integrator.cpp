#include "diffpos/integrator.hpp"

#include <algorithm>
#include <cmath>

namespace diffpos {

namespace {

// Dormand-Prince 5(4) tableau and dense-output weights (Hairer, Norsett, Wanner).
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                 d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                 d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;

double guarded_norm(const Vector& y, int guard) {
  const Eigen::Index n = guard > 0 ? std::min<Eigen::Index>(guard, y.size()) : y.size();
  return y.head(n).lpNorm<Eigen::Infinity>();
}

}  // namespace

std::size_t DenseSolution::locate(double t) const {
  // Steps are stored in integration order; times_ is monotone in either direction.
  const bool forward = times_.back() >= times_.front();
  auto it = forward ? std::upper_bound(times_.begin(), times_.end(), t)
                    : std::upper_bound(times_.begin(), times_.end(), t, std::greater<double>());
  std::size_t idx = static_cast<std::size_t>(std::distance(times_.begin(), it));
  if (idx == 0) return 0;
  return std::min(idx - 1, steps_.size() - 1);
}

Vector DenseSolution::operator()(double t) const {
  if (steps_.empty()) return states_.front();
  const std::size_t i = locate(t);
  const Step& s = steps_[i];
  double theta = (t - s.t0) / s.h;
  theta = std::clamp(theta, 0.0, 1.0);
  const double theta1 = 1.0 - theta;
  return s.r1 + theta * (s.r2 + theta1 * (s.r3 + theta * (s.r4 + theta1 * s.r5)));
}

DenseSolution Integrator::solve(const Rhs& rhs, double t0, const Vector& y0, double t_end, int guard_components,
                                const EventSpec* event, std::optional<EventHit>* hit) const {
  DenseSolution sol;
  sol.times_.push_back(t0);
  sol.states_.push_back(y0);
  if (hit) hit->reset();
  if (!y0.allFinite()) throw Error("dynsys.nonfinite", "initial state not finite");
  if (t_end == t0) return sol;

  const double dir = t_end > t0 ? 1.0 : -1.0;
  const Eigen::Index n = y0.size();
  const double atol = opts_.abs_tol;
  const double rtol = opts_.rel_tol;

  Vector y = y0, ynew(n), k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), err(n);
  double t = t0;
  rhs(t, y, k1);

  auto scaled_err = [&](const Vector& e, const Vector& ya, const Vector& yb) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sc = atol + rtol * std::max(std::abs(ya[i]), std::abs(yb[i]));
      const double r = e[i] / sc;
      acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(n));
  };

  double h;
  if (opts_.method == StepMethod::kRk4) {
    h = dir * std::abs(opts_.fixed_step);
  } else if (opts_.initial_step > 0.0) {
    h = dir * opts_.initial_step;
  } else {
    // Initial step heuristic (Hairer, Solving ODEs I, II.4).
    Vector sc = (atol + rtol * y.array().abs()).matrix();
    const double dnf = std::sqrt((k1.array() / sc.array()).square().mean());
    const double dny = std::sqrt((y.array() / sc.array()).square().mean());
    double h0 = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : 0.01 * dny / dnf;
    h0 = std::min(h0, std::abs(t_end - t0));
    tmp = y + dir * h0 * k1;
    rhs(t + dir * h0, tmp, k2);
    const double der2 = std::sqrt((((k2 - k1).array() / sc.array())).square().mean()) / h0;
    const double der = std::max(der2, dnf);
    const double h1 = der <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / der, 1.0 / 5.0);
    h = dir * std::min({100.0 * h0, h1, std::abs(t_end - t0)});
  }

  double g_prev = 0.0;
  if (event) g_prev = event->g(t, y);

  long steps = 0;
  bool last = false;
  while (!last) {
    if (++steps > opts_.max_steps) throw Error("dynsys.max_steps", "step budget exhausted");
    if (std::abs(h) > opts_.max_step) h = dir * opts_.max_step;
    if ((t + h - t_end) * dir >= 0.0) {
      h = t_end - t;
      last = true;
    }
    const double hmin = opts_.min_step * std::max(1.0, std::abs(t));
    if (std::abs(h) < hmin && !last) {
      throw Error("dynsys.step_underflow", "step size underflow (stiffness failure) at t=" + std::to_string(t));
    }

    DenseSolution::Step step;
    double next_factor = 1.0;
    double tnew = t + h;
    if (last) tnew = t_end;

    if (opts_.method == StepMethod::kRk4) {
      tmp = y + 0.5 * h * k1;
      rhs(t + 0.5 * h, tmp, k2);
      tmp = y + 0.5 * h * k2;
      rhs(t + 0.5 * h, tmp, k3);
      tmp = y + h * k3;
      rhs(t + h, tmp, k4);
      ynew = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!ynew.allFinite()) throw Error("dynsys.nonfinite", "state became non-finite");
      rhs(tnew, ynew, k7);
      step.r1 = y;
      step.r2 = ynew - y;
      step.r3 = h * k1 - step.r2;
      step.r4 = step.r2 - h * k7 - step.r3;
      step.r5 = Vector::Zero(n);
    } else {
      tmp = y + h * a21 * k1;
      rhs(t + c2 * h, tmp, k2);
      tmp = y + h * (a31 * k1 + a32 * k2);
      rhs(t + c3 * h, tmp, k3);
      tmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
      rhs(t + c4 * h, tmp, k4);
      tmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
      rhs(t + c5 * h, tmp, k5);
      tmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
      rhs(t + h, tmp, k6);
      ynew = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
      rhs(tnew, ynew, k7);
      err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      double en = scaled_err(err, y, ynew);
      if (!std::isfinite(en)) en = 1e10;
      if (en > 1.0) {
        const double fac = std::max(0.2, 0.9 * std::pow(en, -0.2));
        h *= fac;
        last = false;
        continue;
      }
      step.r1 = y;
      step.r2 = ynew - y;
      step.r3 = h * k1 - step.r2;
      step.r4 = step.r2 - h * k7 - step.r3;
      step.r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
      next_factor = en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
    }

    step.t0 = t;
    step.h = tnew - t;
    sol.steps_.push_back(std::move(step));
    sol.times_.push_back(tnew);
    sol.states_.push_back(ynew);
    if (guarded_norm(ynew, guard_components) > opts_.max_norm) {
      throw Error("dynsys.overflow", "state norm exceeded " + std::to_string(opts_.max_norm));
    }
    t = tnew;
    y = ynew;
    k1 = k7;
    h *= next_factor;
    if (!event) continue;

    const double g_new = event->g(t, y);
    const bool past_guard = std::abs(t - t0) > event->ignore_until;
    const bool rising = g_prev < 0.0 && g_new >= 0.0;
    const bool falling = g_prev > 0.0 && g_new <= 0.0;
    const bool match = (event->direction >= 0 && rising) || (event->direction <= 0 && falling);
    if (past_guard && match) {
      const auto& s = sol.steps_.back();
      double lo = s.t0, hi = s.t0 + s.h;
      double glo = g_prev;
      while (std::abs(hi - lo) > event->time_tol) {
        const double mid = 0.5 * (lo + hi);
        const double gm = event->g(mid, sol(mid));
        if ((gm < 0.0) == (glo < 0.0) && gm != 0.0) {
          lo = mid;
          glo = gm;
        } else {
          hi = mid;
        }
      }
      const Vector ye = sol(hi);
      // Truncate the last interpolant at the event so the solution ends there.
      sol.times_.back() = hi;
      sol.states_.back() = ye;
      if (hit) *hit = EventHit{hi, ye};
      return sol;
    }
    g_prev = g_new;
  }
  return sol;
}

}  // namespace diffpos
