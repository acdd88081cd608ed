#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

#include "diffpos/common.hpp"

namespace diffpos {

struct Box {
  Vector lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const Vector& x) const;
  Vector center() const { return 0.5 * (lo + hi); }
};

// Box validated for matching dimensions and lo < hi componentwise.
Box make_box(const Vector& lo, const Vector& hi);

struct Sampler {
  Box box;
  int count = 100;
  std::uint64_t seed = 1;
};

// Uniform points in the box from a seeded mt19937_64. The mapping from raw
// 64-bit draws is done here (not with std::uniform_real_distribution) so the
// sequence does not depend on the standard library implementation.
std::vector<Vector> sample_points(const Sampler& s);
std::vector<Vector> sample_unit_vectors(int dim, int count, std::uint64_t seed);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  int points = 0;
};

// Ordinary least squares y = slope * x + intercept. Fewer than two points
// gives points < 2 and a zero slope.
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is owned
// by exactly one worker, so writing results into slot i is race-free and the
// output order does not depend on scheduling. The first exception (lowest
// index) is rethrown after all workers join.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace diffpos
