#include "diffpos/construct.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace diffpos {

namespace {

Matrix annihilator(const Vector& l) {
  const int n = static_cast<int>(l.size());
  Eigen::HouseholderQR<Matrix> qr(l.normalized());
  const Matrix q = qr.householderQ() * Matrix::Identity(n, n);
  return q.rightCols(n - 1);
}

// Q of a thin QR with columns kept on the side of the input columns; also
// returns R so that a = Q R.
Matrix orthonormalize(const Matrix& a, Matrix* r_out = nullptr) {
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
  Matrix r = qr.matrixQR().topRows(a.cols()).triangularView<Eigen::Upper>();
  for (int c = 0; c < a.cols(); ++c) {
    if (r(c, c) < 0) {
      q.col(c) = -q.col(c);
      r.row(c) = -r.row(c);
    }
  }
  if (r_out) *r_out = r;
  return q;
}

// Equal arc-length resampling of a polyline, endpoints included.
std::vector<Vector> resample(const std::vector<Vector>& pts, double spacing) {
  if (pts.size() < 2) return pts;
  std::vector<double> s{0.0};
  for (std::size_t i = 1; i < pts.size(); ++i) s.push_back(s.back() + (pts[i] - pts[i - 1]).norm());
  const int m = std::max(1, static_cast<int>(std::ceil(s.back() / spacing)));
  std::vector<Vector> out;
  std::size_t j = 0;
  for (int k = 0; k <= m; ++k) {
    const double target = s.back() * k / m;
    while (j + 2 < s.size() && s[j + 1] < target) ++j;
    const double u = s[j + 1] > s[j] ? std::clamp((target - s[j]) / (s[j + 1] - s[j]), 0.0, 1.0) : 0.0;
    out.push_back(pts[j] + u * (pts[j + 1] - pts[j]));
  }
  return out;
}

struct SegmentHit {
  Vector point;
  double distance;
  double u;
};

SegmentHit closest_on_segment(const Vector& a, const Vector& b, const Vector& y) {
  const Vector ab = b - a;
  const double l2 = ab.squaredNorm();
  const double u = l2 > 0 ? std::clamp((y - a).dot(ab) / l2, 0.0, 1.0) : 0.0;
  Vector p = a + u * ab;
  const double d = (y - p).norm();
  return {std::move(p), d, u};
}

template <class Fn>
void for_each_segment(const AttractorFrames& frames, Fn&& fn) {
  for (std::size_t k = 0; k < frames.pieces.size(); ++k) {
    const auto& piece = frames.pieces[k];
    const std::size_t m = piece.size();
    if (m == 1) {
      fn(static_cast<int>(k), 0, piece[0].x, piece[0].x);
      continue;
    }
    const std::size_t segs = frames.closed ? m : m - 1;
    for (std::size_t i = 0; i < segs; ++i) {
      fn(static_cast<int>(k), static_cast<int>(i), piece[i].x, piece[(i + 1) % m].x);
    }
  }
}

// Aligns the basis b to a by the orthogonal Procrustes rotation and rewrites
// the weight so that the quadratic form on span(b) is unchanged.
void align_to(const Matrix& a, Matrix& b, Matrix& wb) {
  if (b.cols() == 0) return;
  Eigen::JacobiSVD<Matrix> svd(b.transpose() * a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix r = svd.matrixU() * svd.matrixV().transpose();
  b = b * r;
  wb = r.transpose() * wb * r;
}

Cone frame_cone(const Vector& axis, const Frame& f) {
  return Cone::elliptical(axis, f.n, f.cone_weight(), 1.0);
}

// Distance to the segments within `window` of the hint; an upper bound on the
// true distance. The hint moves to the best segment found.
double local_distance(const AttractorFrames& frames, const Vector& y, Projection& hint, int window) {
  const auto& piece = frames.pieces[static_cast<std::size_t>(hint.piece)];
  const int m = static_cast<int>(piece.size());
  if (m == 1) return (y - piece[0].x).norm();
  const int segs = frames.closed ? m : m - 1;
  double best = kInf;
  int best_seg = hint.seg;
  for (int o = -window; o <= window; ++o) {
    int i = hint.seg + o;
    if (frames.closed) {
      i = ((i % segs) + segs) % segs;
    } else if (i < 0 || i >= segs) {
      continue;
    }
    const auto h = closest_on_segment(piece[static_cast<std::size_t>(i)].x,
                                      piece[static_cast<std::size_t>((i + 1) % m)].x, y);
    if (h.distance < best) {
      best = h.distance;
      best_seg = i;
    }
  }
  hint.seg = best_seg;
  return best;
}

}  // namespace

AdaptedNorms adapted_norms(const SystemDef& sys, const Vector& x, const Vector& tangent, const Matrix& normal,
                           double lambda1, double lambda2, double t_int, const MetricOptions& opts) {
  if (!(t_int > 0)) throw Error("construct.quadrature", "integration horizon must be positive");
  const int n = sys.dim();
  const int k = static_cast<int>(normal.cols());
  Matrix seed(n, k + 1);
  seed.col(0) = tangent.normalized();
  seed.rightCols(k) = normal;
  const auto seg = prolonged_flow(sys, x, seed, t_int, opts.integ);
  const int panels = std::max(2, opts.quadrature + opts.quadrature % 2);
  const double h = t_int / panels;
  AdaptedNorms out;
  out.w_star = Matrix::Zero(k, k);
  for (int i = 0; i <= panels; ++i) {
    const double t = h * i;
    const double wgt = (i == 0 || i == panels) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const Matrix phi = i == 0 ? seed : seg.fundamental_at(t);
    out.tangent_weight += wgt * phi.col(0).norm() * std::exp(lambda2 * t);
    const Matrix pn = phi.rightCols(k);
    out.w_star += wgt * (pn.transpose() * pn) * std::exp(2.0 * lambda1 * t);
  }
  out.tangent_weight *= h / 3.0;
  out.w_star *= h / 3.0;
  out.w_star = 0.5 * (out.w_star + out.w_star.transpose()).eval();
  if (!std::isfinite(out.tangent_weight) || !out.w_star.allFinite() || out.tangent_weight > 1e150 ||
      out.w_star.cwiseAbs().maxCoeff() > 1e150) {
    throw Error("construct.quadrature", "adapted weights diverge; shorten T_int");
  }
  return out;
}

AttractorFrames adapted_metric(const SystemDef& sys, const AttractorModel& model, const NHCertificate& cert,
                               double t_int, double spacing, const MetricOptions& opts) {
  if (!cert.verdict) throw Error("construct.certificate_negative", "normal hyperbolicity not certified: " + cert.reason);
  if (!(spacing > 0)) throw Error("construct.spacing", "spacing must be positive");
  const int n = sys.dim();
  AttractorFrames out;
  out.lambda1 = cert.lambda1;
  out.lambda2 = cert.lambda2;
  out.spacing = spacing;

  struct Raw {
    Vector x, xi;
    Matrix n;
  };
  std::vector<std::vector<Raw>> raw;

  if (model.kind == AttractorKind::kLimitCycle) {
    if (!model.cycle) throw Error("construct.degenerate_frame", "cycle model without a cycle");
    const auto& c = *model.cycle;
    out.closed = true;
    out.t_int = std::max(1.0, std::ceil(t_int / c.period - 1e-9)) * c.period;
    // Invariant normal bundle: annihilator of the left eigenvector of the
    // trivial multiplier, carried around the orbit by Phi.
    Eigen::EigenSolver<Matrix> left(c.monodromy.transpose());
    int best = 0;
    for (int i = 1; i < n; ++i) {
      if (std::abs(left.eigenvalues()[i] - 1.0) < std::abs(left.eigenvalues()[best] - 1.0)) best = i;
    }
    const Matrix n0 = annihilator(left.eigenvectors().col(best).real());
    const auto seg = prolonged_flow(sys, c.anchor, Matrix::Identity(n, n), c.period, opts.integ);
    const int fine = 8000;
    std::vector<double> ts, s;
    for (int i = 0; i <= fine; ++i) {
      ts.push_back(c.period * i / fine);
      s.push_back(i == 0 ? 0.0 : s.back() + (seg.base.state_at(ts[i]) - seg.base.state_at(ts[i - 1])).norm());
    }
    const int m = std::max(8, static_cast<int>(std::ceil(s.back() / spacing)));
    std::vector<Raw> piece;
    std::size_t j = 0;
    for (int k = 0; k < m; ++k) {
      const double target = s.back() * k / m;
      while (j + 1 < s.size() && s[j + 1] < target) ++j;
      const double u = s[j + 1] > s[j] ? (target - s[j]) / (s[j + 1] - s[j]) : 0.0;
      const double t = ts[j] + u * (ts[j + 1] - ts[j]);
      const Vector x = k == 0 ? c.anchor : seg.base.state_at(t);
      const Matrix phi = k == 0 ? Matrix::Identity(n, n) : seg.fundamental_at(t);
      piece.push_back({x, sys.field(x).normalized(), orthonormalize(phi * n0)});
    }
    raw.push_back(std::move(piece));
  } else {
    out.t_int = t_int;
    std::vector<std::pair<Vector, FixedPointSplit>> splits;
    for (const auto& fp : model.fixed_points) splits.push_back({fp.x, classify_fixed_point(sys, fp.x)});
    auto frame_at = [&](const Vector& x) -> Raw {
      for (const auto& [p, sp] : splits) {
        if ((p - x).norm() < 1e-12) return {x, sp.w, sp.n};
      }
      const Vector f = sys.field(x);
      if (!(f.norm() > 1e-14)) throw Error("construct.degenerate_frame", "tangent undefined on the attractor");
      const auto fm = flow_map(sys, x, out.t_int, opts.integ);
      Eigen::JacobiSVD<Matrix> svd(fm.phi, Eigen::ComputeFullV);
      return {x, f.normalized(), Matrix(svd.matrixV().rightCols(n - 1))};
    };
    if (model.arcs.empty()) {
      for (const auto& [p, sp] : splits) raw.push_back({{p, sp.w, sp.n}});
    }
    for (const auto& arc : model.arcs) {
      std::vector<Raw> piece;
      for (const auto& x : resample(arc, spacing)) piece.push_back(frame_at(x));
      raw.push_back(std::move(piece));
    }
  }

  // Orientation: the first frame as given, every later one matched to the
  // nearest frame already oriented.
  std::vector<const Raw*> done;
  for (auto& piece : raw) {
    for (auto& r : piece) {
      const Raw* near = nullptr;
      double bd = kInf;
      for (const Raw* d : done) {
        const double dist = (d->x - r.x).norm();
        if (dist < bd) {
          bd = dist;
          near = d;
        }
      }
      if (near && near->xi.dot(r.xi) < 0) r.xi = -r.xi;
      done.push_back(&r);
    }
  }

  for (const auto& piece : raw) {
    std::vector<Frame> frames;
    for (const auto& r : piece) {
      const auto nm = adapted_norms(sys, r.x, r.xi, r.n, out.lambda1, out.lambda2, out.t_int, opts);
      Eigen::SelfAdjointEigenSolver<Matrix> es(nm.w_star, Eigen::EigenvaluesOnly);
      if (!(nm.tangent_weight > 0) || (n > 1 && !(es.eigenvalues().minCoeff() > 0))) {
        throw Error("construct.degenerate_frame", "adapted weights are not positive definite");
      }
      frames.push_back(Frame{r.x, r.xi, r.n, nm.w_star, nm.tangent_weight});
    }
    out.pieces.push_back(std::move(frames));
  }
  return out;
}

Projection project(const AttractorFrames& frames, const Vector& y) {
  // Allocation-free scan; the foot point is formed once at the end.
  const Eigen::Index n = y.size();
  const double* py = y.data();
  double best_d2 = kInf, best_u = 0.0;
  int best_piece = -1, best_seg = 0;
  for (std::size_t k = 0; k < frames.pieces.size(); ++k) {
    const auto& piece = frames.pieces[k];
    const std::size_t m = piece.size();
    const std::size_t segs = m == 1 ? 1 : (frames.closed ? m : m - 1);
    for (std::size_t i = 0; i < segs; ++i) {
      const double* a = piece[i].x.data();
      const double* b = piece[(i + 1) % m].x.data();
      double l2 = 0.0, dot = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double ab = b[j] - a[j];
        l2 += ab * ab;
        dot += (py[j] - a[j]) * ab;
      }
      const double u = l2 > 0 ? std::clamp(dot / l2, 0.0, 1.0) : 0.0;
      double d2 = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double r = py[j] - (a[j] + u * (b[j] - a[j]));
        d2 += r * r;
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best_u = u;
        best_piece = static_cast<int>(k);
        best_seg = static_cast<int>(i);
      }
    }
  }
  if (best_piece < 0) throw Error("construct.degenerate_frame", "empty attractor discretization");
  const auto& piece = frames.pieces[static_cast<std::size_t>(best_piece)];
  const Vector& a = piece[static_cast<std::size_t>(best_seg)].x;
  const Vector& b = piece[(static_cast<std::size_t>(best_seg) + 1) % piece.size()].x;
  Projection p;
  p.piece = best_piece;
  p.seg = best_seg;
  p.u = best_u;
  p.point = a + best_u * (b - a);
  p.distance = std::sqrt(best_d2);
  return p;
}

Frame interpolate(const AttractorFrames& frames, const Projection& p) {
  const auto& piece = frames.pieces[static_cast<std::size_t>(p.piece)];
  const std::size_t m = piece.size();
  const Frame& a = piece[static_cast<std::size_t>(p.seg)];
  if (m == 1) return a;
  const Frame& b = piece[(static_cast<std::size_t>(p.seg) + 1) % m];
  if (p.u <= 0.0) return a;
  if (p.u >= 1.0) return b;
  Matrix nb = b.n, wb = b.w_star;
  align_to(a.n, nb, wb);
  Frame f;
  f.x = p.point;
  f.xi = ((1 - p.u) * a.xi + p.u * b.xi).normalized();
  Matrix r;
  f.n = orthonormalize((1 - p.u) * a.n + p.u * nb, &r);
  // N_mix u = Q (R u): weights move to the new coordinates R u.
  const Matrix rinv = r.inverse();
  f.w_star = rinv.transpose() * ((1 - p.u) * a.w_star + p.u * wb) * rinv;
  f.tangent_weight = std::exp((1 - p.u) * std::log(a.tangent_weight) + p.u * std::log(b.tangent_weight));
  return f;
}

ConeField attractor_cone_field(const AttractorFrames& frames, double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw Error("construct.epsilon", "eps must lie in (0, 1)");
  return ConeField::anchored(
      [frames](const Vector& x) {
        const Frame f = interpolate(frames, project(frames, x));
        return frame_cone(f.xi, f);
      },
      "attractor");
}

TubeField::TubeField(SystemDef sys, AttractorFrames frames, double c, double rho)
    : sys_(std::move(sys)), frames_(std::move(frames)), c_(c), rho_(rho) {}

Vector TubeField::xi_bar(const Vector& y, const Frame& f) const {
  if (!frames_.closed) return f.xi;
  const Vector fy = sys_.field(y);
  if (!(fy.norm() > 1e-12)) return f.xi;
  const Vector v = fy.normalized();
  return v.dot(f.xi) < 0 ? Vector(-v) : v;
}

Cone TubeField::cone(const Vector& y) const {
  const Frame f = interpolate(frames_, project(frames_, y));
  return frame_cone(xi_bar(y, f), f);
}

ConeField TubeField::field() const {
  TubeField self = *this;
  return ConeField::anchored([self](const Vector& y) { return self.cone(y); }, "tube");
}

TubeField tube_extension(const SystemDef& sys, const AttractorFrames& frames, double c, const TubeOptions& opts) {
  if (!(c > 0)) throw Error("construct.radius", "tube radius must be positive");
  const int n = sys.dim();
  std::vector<const Frame*> all;
  for (const auto& piece : frames.pieces) {
    for (const auto& f : piece) all.push_back(&f);
  }
  const std::size_t stride = std::max<std::size_t>(1, all.size() / static_cast<std::size_t>(std::max(1, opts.test_frames)));
  std::vector<const Frame*> tests;
  for (std::size_t i = 0; i < all.size(); i += stride) tests.push_back(all[i]);
  if (tests.back() != all.back()) tests.push_back(all.back());
  std::vector<Vector> dirs = sample_unit_vectors(n, opts.test_directions, opts.seed);

  // Projection uniqueness at radius c: no near-minimal foot point far from
  // the minimal one.
  for (const Frame* f : tests) {
    std::vector<Vector> offsets;
    for (int k = 0; k < f->n.cols(); ++k) {
      offsets.push_back(f->n.col(k));
      offsets.push_back(-f->n.col(k));
    }
    for (const Vector& d : offsets) {
      const Vector y = f->x + c * d;
      std::vector<SegmentHit> hits;
      for_each_segment(frames, [&](int, int, const Vector& a, const Vector& b) { hits.push_back(closest_on_segment(a, b, y)); });
      const auto best = std::min_element(hits.begin(), hits.end(),
                                         [](const SegmentHit& p, const SegmentHit& q) { return p.distance < q.distance; });
      for (const auto& h : hits) {
        if (h.distance <= best->distance + 0.05 * c && (h.point - best->point).norm() > 2.0 * c) {
          throw Error("construct.projection_ambiguous", "tube radius too large for a unique projection");
        }
      }
    }
  }

  auto invariant = [&](double rho) {
    for (const Frame* f : tests) {
      std::vector<Vector> starts;
      for (int k = 0; k < f->n.cols(); ++k) {
        starts.push_back(f->x + rho * f->n.col(k));
        starts.push_back(f->x - rho * f->n.col(k));
      }
      for (const auto& d : dirs) starts.push_back(f->x + rho * d);
      for (const auto& y0 : starts) {
        try {
          const auto seg = flow(sys, y0, opts.test_horizon, opts.integ);
          Projection hint = project(frames, y0);
          auto inside = [&](const Vector& y) {
            if (local_distance(frames, y, hint, 8) <= c) return true;
            hint = project(frames, y);
            return hint.distance <= c;
          };
          for (const auto& y : seg.states) {
            if (!inside(y)) return false;
          }
          const int grid = 50;
          for (int i = 0; i <= grid; ++i) {
            if (!inside(seg.state_at(opts.test_horizon * i / grid))) return false;
          }
        } catch (const Error&) {
          return false;
        }
      }
    }
    return true;
  };

  double rho = 0.9 * c;
  if (!invariant(rho)) {
    double lo = 0.0, hi = rho;
    for (int i = 0; i < opts.bisections; ++i) {
      const double mid = 0.5 * (lo + hi);
      (invariant(mid) ? lo : hi) = mid;
    }
    if (!(lo > 0.0)) throw Error("construct.tube_not_invariant", "no forward-invariant inner tube found");
    rho = lo;
  }
  return TubeField(sys, frames, c, rho);
}

Cone tighten(const Cone& k, double rho) {
  if (k.kind() != ConeKind::kElliptical) throw Error("construct.cone_kind", "tightening needs an elliptical cone");
  return Cone::elliptical(k.axis(), k.normal_basis(), k.weight() * std::exp(2.0 * rho), k.sigma());
}

BasinField::BasinField(TubeField tube, BasinOptions opts) : tube_(std::move(tube)), opts_(std::move(opts)) {}

BasinEval BasinField::evaluate(const Vector& x) const {
  const double rho = tube_.rho();
  if (tube_.distance(x) <= rho) return BasinEval{0.0, x, tube_.cone(x), 1.0};
  const auto& frames = tube_.frames();
  EventSpec ev;
  ev.g = [&frames, rho](double, const Vector& y) { return project(frames, y).distance - rho; };
  ev.direction = -1;
  ev.time_tol = 1e-10;
  std::optional<EventHit> hit;
  const int n = tube_.system().dim();
  const auto seg = prolonged_flow_until(tube_.system(), x, Matrix::Identity(n, n), opts_.tau_max, ev, hit, opts_.integ);
  if (!hit) throw Error("construct.tau_max", "tube not reached within tau_max");
  const double tau = hit->t;
  double cond = 1.0;
  Cone k = pull_back(tighten(tube_.cone(hit->y), tau), seg.final_fundamental(), &cond);
  return BasinEval{tau, hit->y, std::move(k), cond};
}

ConeField BasinField::field() const {
  BasinField self = *this;
  return ConeField::anchored([self](const Vector& x) { return self.evaluate(x).cone; }, "basin");
}

BasinField basin_field(const TubeField& tube, double tau_max, BasinOptions opts) {
  opts.tau_max = tau_max;
  return BasinField(tube, std::move(opts));
}

PositivityReport validate_tube(const TubeField& tube, const std::vector<double>& horizons, double eps, int count,
                               std::uint64_t seed, int threads) {
  const auto& frames = tube.frames();
  std::vector<const Frame*> all;
  for (const auto& piece : frames.pieces) {
    for (const auto& f : piece) all.push_back(&f);
  }
  const int n = tube.system().dim();
  const auto dirs = sample_unit_vectors(n, count, seed);
  std::mt19937_64 rng(seed + 1);
  std::vector<Vector> points;
  for (int i = 0; i < count; ++i) {
    const Frame* f = all[rng() % all.size()];
    const double r = tube.rho() * static_cast<double>(rng() >> 11) * 0x1.0p-53;
    points.push_back(f->x + r * dirs[static_cast<std::size_t>(i)]);
  }
  PositivityOptions popts;
  popts.eps = eps;
  popts.threads = threads;
  return check_diff_positivity(tube.system(), tube.field(), points, horizons, popts);
}

CertifyResult certificate(const SystemDef& sys, const AttractorModel& model, const CertifyParams& params) {
  CertifyResult out;
  std::string stage = "nh";
  try {
    if (model.kind == AttractorKind::kLimitCycle && model.cycle) out.floquet = floquet(sys, *model.cycle);
    out.nh = verify_normal_hyperbolicity(sys, model, params.nh_horizon);
    if (!out.nh.verdict) {
      out.stage = stage;
      out.error = "attractors.not_normally_hyperbolic: " + out.nh.reason;
      return out;
    }
    // The tube construction holds for c small enough: halve c until the
    // tube cones pass sampled positivity inside the inner tube.
    std::optional<TubeField> tube;
    double c = params.c;
    for (int k = 0; k <= params.max_halvings && !tube; ++k, c *= 0.5) {
      stage = "metric";
      out.frames = adapted_metric(sys, model, out.nh, params.t_int, c / 5.0);
      stage = "tube";
      TubeOptions topts;
      topts.seed = params.sampler.seed + 11;
      auto candidate = tube_extension(sys, *out.frames, c, topts);
      const auto check = validate_tube(candidate, params.horizons, params.eps, params.tube_samples,
                                       params.sampler.seed + 13, params.threads);
      if (check.violations.empty() && check.failures.empty()) tube = std::move(candidate);
    }
    if (!tube) throw Error("construct.tube_not_positive", "tube cones fail sampled positivity at every tested radius");
    out.c = tube->c();
    out.rho = tube->rho();
    const auto& tube_ref = *tube;
    stage = "basin";
    const auto basin = basin_field(tube_ref, params.tau_max);
    out.field = basin.field();
    stage = "positivity";
    PositivityOptions popts;
    popts.eps = params.eps;
    popts.rays = params.rays;
    popts.threads = params.threads;
    out.report = check_diff_positivity(sys, *out.field, params.sampler, params.horizons, popts);
    const auto& r = *out.report;
    if (!r.violations.empty()) {
      out.error = "construct.violations";
    } else if (!r.failures.empty()) {
      out.error = "construct.sample_failures";
    } else if (!r.t_used) {
      out.error = "construct.not_strict";
    }
    out.success = out.error.empty();
    if (!out.success) out.stage = stage;
  } catch (const Error& e) {
    out.stage = stage;
    out.error = e.code();
    out.success = false;
  }
  return out;
}

}  // namespace diffpos
