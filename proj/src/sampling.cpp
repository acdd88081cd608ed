#include "diffpos/sampling.hpp"

#include <cmath>
#include <random>

namespace diffpos {

namespace {

double unit_draw(std::mt19937_64& rng) {
  // 53 random bits -> [0, 1).
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double normal_draw(std::mt19937_64& rng) {
  // Box-Muller on two uniform draws; 1 - u keeps the log argument positive.
  const double u1 = 1.0 - unit_draw(rng);
  const double u2 = unit_draw(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace

bool Box::contains(const Vector& x) const {
  return ((x - lo).array() >= 0.0).all() && ((hi - x).array() >= 0.0).all();
}

Box make_box(const Vector& lo, const Vector& hi) {
  if (lo.size() == 0 || lo.size() != hi.size()) throw Error("cli.box", "box bounds must have equal nonzero length");
  if (!((hi - lo).array() > 0.0).all()) throw Error("cli.box", "box is empty (need lo < hi in every coordinate)");
  return Box{lo, hi};
}

std::vector<Vector> sample_points(const Sampler& s) {
  std::mt19937_64 rng(s.seed);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(std::max(0, s.count)));
  for (int i = 0; i < s.count; ++i) {
    Vector x(s.box.dim());
    for (int j = 0; j < s.box.dim(); ++j) x[j] = s.box.lo[j] + (s.box.hi[j] - s.box.lo[j]) * unit_draw(rng);
    out.push_back(std::move(x));
  }
  return out;
}

std::vector<Vector> sample_unit_vectors(int dim, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vector> out;
  for (int i = 0; i < count; ++i) {
    Vector d(dim);
    do {
      for (int j = 0; j < dim; ++j) d[j] = normal_draw(rng);
    } while (d.norm() < 1e-12);
    out.push_back(d / d.norm());
  }
  return out;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  LinearFit f;
  const std::size_t n = std::min(x.size(), y.size());
  f.points = static_cast<int>(n);
  if (n < 2) return f;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  return f;
}

}  // namespace diffpos
