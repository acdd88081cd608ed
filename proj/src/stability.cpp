#include "diffpos/stability.hpp"

#include <cmath>

namespace diffpos {

MetricSpec MetricSpec::constant(const Matrix& p) {
  MetricSpec m;
  m.p = [p](const Vector&) { return p; };
  return m;
}

MetricSpec MetricSpec::identity(int dim) { return constant(Matrix::Identity(dim, dim)); }

Matrix MetricSpec::at(const Vector& x) const {
  const Matrix px = p(x);
  if (px.rows() != x.size() || px.cols() != x.size()) throw Error("stability.metric", "metric has wrong shape");
  if ((px - px.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, px.cwiseAbs().maxCoeff())) {
    throw Error("stability.metric", "metric is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(px, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > 0.0)) throw Error("stability.metric", "metric is not positive definite");
  return px;
}

double MetricSpec::norm(const Vector& x, const Vector& d) const { return std::sqrt(d.dot(at(x) * d)); }

namespace {

std::vector<double> grid_times(double horizon, int grid) {
  std::vector<double> t(static_cast<std::size_t>(grid));
  for (int i = 0; i < grid; ++i) t[static_cast<std::size_t>(i)] = horizon * i / (grid - 1);
  return t;
}

}  // namespace

ContractionReport check_metric_contraction(const SystemDef& sys, const MetricSpec& metric, const Sampler& sampler,
                                           double horizon, double lambda_target, const ContractionOptions& opts) {
  if (!(horizon > 0.0)) throw Error("stability.horizon", "horizon must be positive");
  if (opts.grid < 3) throw Error("stability.horizon", "need at least three grid points");
  if (sampler.box.dim() != sys.dim()) throw Error("stability.dimension", "sampling box dimension mismatch");
  const auto times = grid_times(horizon, opts.grid);
  const auto points = sample_points(sampler);
  const auto dirs = sample_unit_vectors(sys.dim(), sampler.count, sampler.seed + 1);
  Sampler partner = sampler;
  partner.seed = sampler.seed + 2;
  const auto others = sample_points(partner);

  ContractionReport rep;
  rep.samples.resize(points.size());
  parallel_for(points.size(), opts.threads, [&](std::size_t i) {
    ContractionSample& s = rep.samples[i];
    s.x = points[i];
    s.dx = dirs[i];
    try {
      const auto seg = prolonged_flow(sys, s.x, s.dx, horizon, opts.integ);
      std::vector<double> ts, logs;
      for (double t : times) {
        const Vector y = seg.base.state_at(t);
        const Vector d = seg.fundamental_at(t).col(0);
        const double n = metric.norm(y, d);
        if (!(n > 1e-300)) continue;
        ts.push_back(t);
        logs.push_back(std::log(n));
      }
      s.exponent = fit_line(ts, logs).slope;
      s.violation = s.exponent > -lambda_target;
    } catch (const Error& e) {
      s.error = e.code();
    }
  });

  if (opts.check_pairs) {
    rep.pairs.resize(points.size());
    parallel_for(points.size(), opts.threads, [&](std::size_t i) {
      PairSample& p = rep.pairs[i];
      p.x = points[i];
      p.y = others[i];
      try {
        const auto a = flow(sys, p.x, horizon, opts.integ);
        const auto b = flow(sys, p.y, horizon, opts.integ);
        std::vector<double> ts, logs;
        for (double t : times) {
          const Vector xa = a.state_at(t), xb = b.state_at(t);
          const double n = metric.norm(0.5 * (xa + xb), xa - xb);
          if (!(n > 1e-12)) continue;
          ts.push_back(t);
          logs.push_back(std::log(n));
        }
        p.exponent = fit_line(ts, logs).slope;
        p.violation = p.exponent > -lambda_target;
      } catch (const Error& e) {
        p.error = e.code();
      }
    });
  }

  for (const auto& s : rep.samples) {
    if (!s.error.empty()) {
      ++rep.failures;
      continue;
    }
    rep.worst_exponent = std::max(rep.worst_exponent, s.exponent);
    rep.violations += s.violation ? 1 : 0;
  }
  for (const auto& p : rep.pairs) {
    if (!p.error.empty()) {
      ++rep.failures;
      continue;
    }
    rep.worst_pair_exponent = std::max(rep.worst_pair_exponent, p.exponent);
    rep.pair_violations += p.violation ? 1 : 0;
  }
  return rep;
}

ConvergenceSeries fixed_point_convergence(const SystemDef& sys, const Vector& x0, double horizon, int grid,
                                          const IntegratorOptions& opts) {
  if (grid < 2) throw Error("stability.horizon", "need at least two grid points");
  const auto seg = flow(sys, x0, horizon, opts);
  ConvergenceSeries out;
  out.monotone = true;
  for (double t : grid_times(horizon, grid)) {
    const double sp = sys.field(seg.state_at(t)).norm();
    if (!out.speed.empty() && sp > out.speed.back() * (1.0 + 1e-12) + 1e-300) out.monotone = false;
    out.times.push_back(t);
    out.speed.push_back(sp);
  }
  out.final_speed = out.speed.back();
  return out;
}

}  // namespace diffpos
