// Analytic interpolation kernels and the closed-form theory of the
// collision-free multi-resolution response.
//
// Every function here is pure; nothing holds state between calls.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace psflab {

enum class KernelKind {
  kTent,     // max(0, 1 - |u|)
  kBSpline,  // tent autocorrelation, peak-normalized cubic B-spline
};

struct KernelSpec {
  KernelKind kind = KernelKind::kBSpline;
  int dimension = 1;
};

/// Geometric level schedule N_l = n_min * growth^l, l = 0..levels-1.
struct LevelSchedule {
  int levels = 1;
  double n_min = 16.0;
  double growth = 2.0;

  double resolution(int level) const;
  std::vector<double> resolutions() const;
  /// Arithmetic mean of the per-level resolutions.
  double n_avg() const;
  double n_max() const { return resolution(levels - 1); }
  void validate() const;
};

struct SpectralWeights {
  double gamma = 0.0;
  std::vector<double> w;
};

double eval_kernel_1d(KernelKind kind, double u);
double eval_kernel_nd(const KernelSpec& spec, std::span<const double> v);

/// Kernel support radius per axis: 1 for the tent, 2 for the B-spline.
double kernel_support(KernelKind kind);

/// Uniformly sampled even function on [-extent, extent].
class SampledFunction {
 public:
  SampledFunction(double spacing, std::vector<double> values);

  double spacing() const { return spacing_; }
  double extent() const;
  std::span<const double> values() const { return values_; }
  /// Linear interpolation; zero outside the sampled range.
  double operator()(double u) const;

 private:
  double spacing_;
  std::vector<double> values_;  // index 0 is u = -extent
};

/// Numeric autocorrelation of the 1D tent, normalized to peak 1, sampled with
/// `samples_per_unit` points per unit length on [-2, 2].
SampledFunction induced_kernel_numeric(int samples_per_unit);

/// Bracketing bisection for a root of f on [lo, hi]. Throws
/// std::domain_error when f(lo) and f(hi) have the same sign.
double bisect(const std::function<double(double)>& f, double lo, double hi,
              double tol = 1e-6);

/// Full width at half maximum of the 1D kernel.
double fwhm_1d(KernelKind kind);

SpectralWeights uniform_weights(int levels);
/// w_l proportional to N_l^-gamma, normalized to sum to one.
SpectralWeights spectral_weights(double gamma, const LevelSchedule& schedule);

/// Weighted superposition of B-spline kernels sum_l w_l B(N_l v); v is the
/// offset from the constraint point in domain units.
double ideal_psf(std::span<const double> v, const LevelSchedule& schedule,
                 const SpectralWeights& weights);

/// Half-maximum width of ideal_psf along the first axis.
double ideal_axis_fwhm(const LevelSchedule& schedule,
                       const SpectralWeights& weights, int dimension = 1);

/// Logarithmic small-offset approximation of the uniform 1D composite,
/// (1 / (L ln b)) (-ln v - 3/4 + 3 v^2 / 4) with v = N_min x.
double closed_form_psf_1d(double v, int levels, double growth);

/// Taylor estimate of the squared distance at which the separable kernel
/// drops to `amplitude` along a K-sparse direction: K (1 - A^{1/K}) / C.
double anisotropy_distance_sq(int k, double amplitude, double curvature = 1.5);

/// Exact counterpart of anisotropy_distance_sq for the B-spline, by bisection.
double bspline_distance_sq(int k, double amplitude);

/// Diagonal-to-axis squared distance ratio d^2(D) / d^2(1).
double anisotropy_ratio(int dimension, double amplitude = 0.5);

/// Axis FWHM with spectral weights at gamma divided by the uniform FWHM.
double beta_opt_of_gamma(double gamma, const LevelSchedule& schedule);

}  // namespace psflab
