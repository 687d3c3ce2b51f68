#include "psflab/kernel_math.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace psflab {

double LevelSchedule::resolution(int level) const {
  return n_min * std::pow(growth, level);
}

std::vector<double> LevelSchedule::resolutions() const {
  std::vector<double> out(levels);
  for (int l = 0; l < levels; ++l) out[l] = resolution(l);
  return out;
}

double LevelSchedule::n_avg() const {
  double sum = 0.0;
  for (int l = 0; l < levels; ++l) sum += resolution(l);
  return sum / levels;
}

void LevelSchedule::validate() const {
  if (levels < 1) throw std::invalid_argument("levels must be >= 1");
  if (!(n_min > 0.0)) throw std::invalid_argument("n_min must be positive");
  if (levels > 1 && !(growth > 1.0))
    throw std::invalid_argument("growth factor must exceed 1 when levels > 1");
}

double eval_kernel_1d(KernelKind kind, double u) {
  const double a = std::abs(u);
  switch (kind) {
    case KernelKind::kTent:
      return std::max(0.0, 1.0 - a);
    case KernelKind::kBSpline:
      if (a <= 1.0) return 1.0 - 1.5 * a * a + 0.75 * a * a * a;
      if (a < 2.0) {
        const double t = 2.0 - a;
        return 0.25 * t * t * t;
      }
      return 0.0;
  }
  return 0.0;
}

double eval_kernel_nd(const KernelSpec& spec, std::span<const double> v) {
  if (static_cast<int>(v.size()) != spec.dimension)
    throw std::invalid_argument("kernel dimension mismatch: expected " +
                                std::to_string(spec.dimension) + ", got " +
                                std::to_string(v.size()));
  double out = 1.0;
  for (double c : v) {
    out *= eval_kernel_1d(spec.kind, c);
    if (out == 0.0) break;
  }
  return out;
}

double kernel_support(KernelKind kind) {
  return kind == KernelKind::kTent ? 1.0 : 2.0;
}

SampledFunction::SampledFunction(double spacing, std::vector<double> values)
    : spacing_(spacing), values_(std::move(values)) {
  if (!(spacing_ > 0.0) || values_.size() % 2 == 0)
    throw std::invalid_argument("SampledFunction needs odd sample count");
}

double SampledFunction::extent() const {
  return spacing_ * static_cast<double>(values_.size() / 2);
}

double SampledFunction::operator()(double u) const {
  const double pos = (u + extent()) / spacing_;
  if (pos < 0.0 || pos > static_cast<double>(values_.size() - 1)) return 0.0;
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= values_.size()) return values_.back();
  const double t = pos - static_cast<double>(i);
  return (1.0 - t) * values_[i] + t * values_[i + 1];
}

SampledFunction induced_kernel_numeric(int samples_per_unit) {
  if (samples_per_unit < 64)
    throw std::invalid_argument("induced_kernel_numeric needs >= 64 samples per unit");
  const int n = samples_per_unit;
  const double h = 1.0 / n;
  // Tent samples on [-1, 1]; index k is t = (k - n) h.
  std::vector<double> tent(2 * n + 1);
  for (int k = 0; k <= 2 * n; ++k) tent[k] = eval_kernel_1d(KernelKind::kTent, (k - n) * h);

  // Autocorrelation on [-2, 2] by the rectangle rule; the tent vanishes at
  // both ends, so this equals the trapezoid rule.
  const int m = 2 * n;
  std::vector<double> corr(2 * m + 1, 0.0);
  for (int s = -m; s <= m; ++s) {
    double acc = 0.0;
    const int lo = std::max(0, -s);
    const int hi = std::min(2 * n, 2 * n - s);
    for (int k = lo; k <= hi; ++k) acc += tent[k] * tent[k + s];
    corr[s + m] = acc * h;
  }
  const double peak = corr[m];
  for (double& c : corr) c /= peak;
  return SampledFunction(h, std::move(corr));
}

double bisect(const std::function<double(double)>& f, double lo, double hi,
              double tol) {
  double flo = f(lo);
  const double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo < 0.0) == (fhi < 0.0))
    throw std::domain_error("bisect: root is not bracketed");
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double fwhm_1d(KernelKind kind) {
  const double half = bisect(
      [kind](double u) { return eval_kernel_1d(kind, u) - 0.5; }, 0.0,
      kernel_support(kind));
  return 2.0 * half;
}

SpectralWeights uniform_weights(int levels) {
  return SpectralWeights{0.0, std::vector<double>(levels, 1.0 / levels)};
}

SpectralWeights spectral_weights(double gamma, const LevelSchedule& schedule) {
  if (gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
  if (gamma == 0.0) return uniform_weights(schedule.levels);
  // Log-space normalization keeps large gamma finite.
  std::vector<double> logw(schedule.levels);
  for (int l = 0; l < schedule.levels; ++l)
    logw[l] = -gamma * std::log(schedule.resolution(l));
  const double top = *std::max_element(logw.begin(), logw.end());
  double sum = 0.0;
  SpectralWeights out{gamma, std::vector<double>(schedule.levels)};
  for (int l = 0; l < schedule.levels; ++l) {
    out.w[l] = std::exp(logw[l] - top);
    sum += out.w[l];
  }
  for (double& w : out.w) w /= sum;
  return out;
}

double ideal_psf(std::span<const double> v, const LevelSchedule& schedule,
                 const SpectralWeights& weights) {
  if (static_cast<int>(weights.w.size()) != schedule.levels)
    throw std::invalid_argument("weights length must equal level count");
  if (v.empty()) throw std::invalid_argument("ideal_psf needs a non-empty offset");
  double out = 0.0;
  for (int l = 0; l < schedule.levels; ++l) {
    const double n = schedule.resolution(l);
    double k = 1.0;
    for (double c : v) {
      k *= eval_kernel_1d(KernelKind::kBSpline, n * c);
      if (k == 0.0) break;
    }
    out += weights.w[l] * k;
  }
  return out;
}

double ideal_axis_fwhm(const LevelSchedule& schedule,
                       const SpectralWeights& weights, int dimension) {
  // Bisect in coarsest-cell units so the tolerance is scale free.
  std::vector<double> v(dimension, 0.0);
  const double half = bisect(
      [&](double r) {
        v[0] = r / schedule.n_min;
        return ideal_psf(v, schedule, weights) - 0.5;
      },
      0.0, kernel_support(KernelKind::kBSpline));
  return 2.0 * half / schedule.n_min;
}

double closed_form_psf_1d(double v, int levels, double growth) {
  if (!(v > 0.0 && v < 1.0))
    throw std::invalid_argument("closed_form_psf_1d needs 0 < v < 1");
  if (!(growth > 1.0)) throw std::invalid_argument("growth factor must exceed 1");
  return (-std::log(v) - 0.75 + 0.75 * v * v) / (levels * std::log(growth));
}

double anisotropy_distance_sq(int k, double amplitude, double curvature) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  if (!(amplitude > 0.0 && amplitude < 1.0))
    throw std::invalid_argument("amplitude must lie in (0, 1)");
  // 1 - A^{1/K} via expm1 keeps precision for large K.
  return -k * std::expm1(std::log(amplitude) / k) / curvature;
}

double bspline_distance_sq(int k, double amplitude) {
  if (k < 1) throw std::invalid_argument("K must be >= 1");
  if (!(amplitude > 0.0 && amplitude < 1.0))
    throw std::invalid_argument("amplitude must lie in (0, 1)");
  const double target = std::pow(amplitude, 1.0 / k);
  const double x = bisect(
      [target](double u) { return eval_kernel_1d(KernelKind::kBSpline, u) - target; },
      0.0, 2.0, 1e-12);
  return k * x * x;
}

double anisotropy_ratio(int dimension, double amplitude) {
  if (dimension < 1) throw std::invalid_argument("dimension must be >= 1");
  return anisotropy_distance_sq(dimension, amplitude) /
         anisotropy_distance_sq(1, amplitude);
}

double beta_opt_of_gamma(double gamma, const LevelSchedule& schedule) {
  if (gamma == 0.0) return 1.0;
  const double base = ideal_axis_fwhm(schedule, uniform_weights(schedule.levels));
  return ideal_axis_fwhm(schedule, spectral_weights(gamma, schedule)) / base;
}

}  // namespace psflab
