// Independent reference computations shared by the unit and acceptance tests.
// Nothing here calls into the library under test.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

inline double tent(double u) { return std::max(0.0, 1.0 - std::abs(u)); }

// (tent * tent)(u) / (tent * tent)(0) by composite Simpson over the overlap.
inline double tent_autocorr(double u, int intervals = 4000) {
  auto raw = [intervals](double s) {
    const double lo = std::max(-1.0, s - 1.0), hi = std::min(1.0, s + 1.0);
    if (hi <= lo) return 0.0;
    // The integrand has kinks at 0 and s; split there so Simpson is exact.
    std::vector<double> cuts{lo};
    for (double k : {0.0, s})
      if (k > lo && k < hi) cuts.push_back(k);
    cuts.push_back(hi);
    std::sort(cuts.begin(), cuts.end());
    double total = 0.0;
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      const double a = cuts[c], b = cuts[c + 1];
      const int n = std::max(2, intervals / 2 * 2);
      const double h = (b - a) / n;
      double acc = tent(a) * tent(s - a) + tent(b) * tent(s - b);
      for (int i = 1; i < n; ++i) {
        const double t = a + i * h;
        acc += (i % 2 ? 4.0 : 2.0) * tent(t) * tent(s - t);
      }
      total += acc * h / 3.0;
    }
    return total;
  };
  return raw(u) / raw(0.0);
}

// Cubic B-spline written out from its two polynomial pieces.
inline double bspline(double u) {
  const double a = std::abs(u);
  if (a < 1.0) return 1.0 - 1.5 * a * a + 0.75 * a * a * a;
  if (a < 2.0) return 0.25 * (2.0 - a) * (2.0 - a) * (2.0 - a);
  return 0.0;
}

// Root of bspline(u) = target on [0, 2] by Newton from a safe start.
inline double bspline_inverse(double target) {
  double u = target > 0.25 ? 0.5 : 1.5;
  for (int it = 0; it < 100; ++it) {
    const double a = u;
    const double f = bspline(a) - target;
    const double df = a < 1.0 ? (-3.0 * a + 2.25 * a * a) : -0.75 * (2.0 - a) * (2.0 - a);
    const double next = u - f / df;
    if (std::abs(next - u) < 1e-15) break;
    u = std::clamp(next, 1e-9, 2.0 - 1e-9);
  }
  return u;
}

// Uniform composite sum_l B(N_l v) / L along one axis.
inline double composite(double v, int levels, double n_min, double growth) {
  double s = 0.0;
  for (int l = 0; l < levels; ++l) s += bspline(n_min * std::pow(growth, l) * v);
  return s / levels;
}

inline std::uint32_t ngp_hash(const std::vector<std::int64_t>& v, std::uint32_t table_size) {
  static const std::uint32_t primes[3] = {1u, 2654435761u, 805459861u};
  std::uint32_t h = 0;
  for (std::size_t d = 0; d < v.size(); ++d) h ^= static_cast<std::uint32_t>(v[d]) * primes[d];
  return h % table_size;
}

// Scalar Adam with bias correction, written from the textbook recurrence.
struct ScalarAdam {
  double lr, b1, b2, eps;
  double m = 0.0, v = 0.0;
  long t = 0;
  double step(double p, double g) {
    ++t;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double mh = m / (1.0 - std::pow(b1, static_cast<double>(t)));
    const double vh = v / (1.0 - std::pow(b2, static_cast<double>(t)));
    return p - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace oracle
