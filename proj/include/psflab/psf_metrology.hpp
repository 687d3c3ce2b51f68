// Empirical point-spread-function measurement: sampling, half-max widths,
// anisotropy, SNR under collisions, and the point-constraint experiments.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "psflab/field_model.hpp"
#include "psflab/kernel_math.hpp"
#include "psflab/training.hpp"

namespace psflab {

using Field = std::function<double(std::span<const double>)>;

class MetrologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense G^D samples of a peak-normalized response centered on x0. Index 0 of
/// each axis sits at offset -half_extent; the last axis varies fastest.
struct PSFMap {
  int dim = 2;
  std::vector<double> center;
  double half_extent = 0.0;
  int samples = 0;
  double raw_peak = 1.0;  // f(x0) before normalization
  std::vector<double> values;

  double spacing() const { return 2.0 * half_extent / (samples - 1); }
  double offset(int i) const { return -half_extent + i * spacing(); }
  double at(std::span<const int> idx) const;
  double center_value() const;
  /// Multilinear interpolation at an offset from the center; NaN outside.
  double interpolate(std::span<const double> offset) const;
};

/// Coarsest-level support radius, the default map half-extent.
double default_half_extent(const LevelSchedule& schedule);

PSFMap sample_psf(const Field& field, std::span<const double> x0, double half_extent, int samples,
                  int workers = 1);
PSFMap sample_psf(const FieldModel& model, std::span<const double> x0, double half_extent, int samples,
                  int workers = 1);

/// Normalized response along rays from the center; built from a map or
/// directly from a field (3D, where dense maps are too large).
struct Probe {
  std::function<double(std::span<const double>)> value;  // takes an offset from the center
  int dim = 2;
  double max_radius = 0.0;
  double step = 0.0;
};

Probe map_probe(const PSFMap& map);
Probe field_probe(const Field& field, std::span<const double> x0, double max_radius, double step);

/// Distance from the center to the first crossing below alpha along `direction`.
double crossing_distance(const Probe& probe, std::span<const double> direction, double alpha = 0.5);
/// Full width through the center: crossing(+dir) + crossing(-dir).
double width_along(const Probe& probe, std::span<const double> direction, double alpha = 0.5);

double fwhm_along(const PSFMap& map, double angle_rad);
double fwhm_along(const PSFMap& map, std::span<const double> direction);

struct AngleWidth {
  double angle_deg = 0.0;
  double width = 0.0;
};

/// Widths over n angles evenly spaced in [0, 180) degrees (2D maps).
std::vector<AngleWidth> fwhm_by_angle(const PSFMap& map, int n_angles = 64, double alpha = 0.5);

/// Max/min width over the probe directions at each amplitude level. In 2D the
/// directions are an n-angle fan; in 3D the 13 axis, face- and body-diagonals.
std::vector<double> anisotropy_profile(const Probe& probe, std::span<const double> alphas, int n_angles = 64);
std::vector<double> anisotropy_profile(const PSFMap& map, std::span<const double> alphas, int n_angles = 64);

/// Mean width along the D coordinate axes.
double axis_fwhm(const Probe& probe);
/// Width along the main diagonal (1, ..., 1) / sqrt(D).
double diagonal_fwhm(const Probe& probe);

/// n_avg(schedule) times the axis-averaged FWHM.
double fit_beta_emp(const PSFMap& map, const LevelSchedule& schedule);

/// 20 log10(peak / RMS of samples beyond 3 * fwhm_axis); +inf when the RMS
/// is below 1e-12. Throws when the window holds no such samples.
double snr_db(const PSFMap& map, double fwhm_axis);

struct PSFMetrics {
  std::vector<AngleWidth> fwhm_by_angle;  // empty for ray-only 3D runs
  double fwhm_axis = 0.0;
  double fwhm_diag = 0.0;
  std::vector<double> alphas;
  std::vector<double> anisotropy;
  double beta_emp = 0.0;
  double snr_db = 0.0;  // NaN when not measured

  double anisotropy_at(double alpha) const;
};

struct MeasureOptions {
  std::vector<double> alphas{0.5};
  int n_angles = 64;
};

PSFMetrics measure_psf(const PSFMap& map, const LevelSchedule& schedule, const MeasureOptions& options = {});
/// Ray-only measurement; snr_db is left NaN.
PSFMetrics measure_psf(const Probe& probe, const LevelSchedule& schedule, const MeasureOptions& options = {});

/// Constraint location for a seed: 0.5 plus a uniform offset in [-jitter, jitter]
/// per axis, so repeated seeds sample different grid alignments.
std::vector<double> jittered_center(int dim, std::uint64_t seed, double jitter);

struct PointPsfOptions {
  double amplitude = 1.0;
  double jitter = 0.05;
  double half_extent = 0.0;  // 0 selects default_half_extent
  int samples = 257;         // per axis, 2D maps
  int ray_steps = 512;       // per unit half-extent, 3D rays
  MeasureOptions measure;
  int workers = 1;
};

struct PointPsfRun {
  std::vector<double> x0;
  PointTrainResult train;
  std::optional<PSFMap> map;  // absent in 3D
  PSFMetrics metrics;
};

/// Trains a fresh model on one constraint and measures its response.
PointPsfRun point_psf_experiment(const EncodingConfig& config, const DecoderSpec& decoder,
                                 const OptimizerSpec& opt, std::uint64_t seed,
                                 const PointPsfOptions& options = {});

struct TwoPointOptions {
  int axis = 0;
  double threshold = 0.01;
  double amplitude = 1.0;
  double jitter = 0.05;
  std::uint64_t seed = 0;
  bool relative = false;  // separations are multiples of the measured FWHM
};

struct TwoPointEntry {
  double d = 0.0;
  double f_norm = 0.0;
  double dip = 0.0;
  double midpoint = 0.0;
  bool ok = true;
  std::string error;
};

struct TwoPointResult {
  double fwhm = 0.0;  // single-point width along the axis at the same seed and center
  double threshold = 0.01;
  std::vector<TwoPointEntry> entries;
  std::optional<double> d_crit;
};

/// Dip depth 1 - f(mid) / mean(f(a), f(b)), clamped to [0, 1].
double dip_depth(double midpoint, double peak_a, double peak_b);

/// First separation whose dip exceeds the threshold, linearly interpolated
/// from the previous entry; nullopt when no entry qualifies.
std::optional<double> critical_distance(std::span<const TwoPointEntry> entries, double threshold);

TwoPointResult two_point_experiment(const EncodingConfig& config, const DecoderSpec& decoder,
                                    const OptimizerSpec& opt, std::span<const double> separations,
                                    const TwoPointOptions& options = {});

struct DipoleOptions {
  int axis = 0;
  double amplitude = 1.0;
  double jitter = 0.05;
  std::uint64_t seed = 0;
  int samples = 201;
  double half_width = 0.0;     // 0 selects twice the single-point FWHM
  double gradient_step = 0.0;  // 0 selects the default PSF map spacing
};

struct DipoleResult {
  std::vector<double> offsets;  // along the axis, relative to the midpoint
  std::vector<double> profile;  // trained dipole field
  std::vector<double> model;    // -d * dP/ds of the single-point response
  double fwhm = 0.0;
  double cosine = 0.0;
  double antisymmetry = 0.0;    // max |p(s) + p(-s)| / max |p|
  double midpoint = 0.0;        // p(0) / max |p|
};

/// Trains +A / -A constraints separated by d and compares the profile with
/// the linearized model d * grad P built from a single-point run.
DipoleResult dipole_experiment(const EncodingConfig& config, const DecoderSpec& decoder,
                               const OptimizerSpec& opt, double d, const DipoleOptions& options = {});

struct CollisionEntry {
  std::uint32_t table_size = 0;
  double load_factor = 0.0;
  double colliding_fraction = 0.0;
  double snr_db = 0.0;
  bool ok = true;
  std::string error;
};

struct CollisionSweep {
  std::vector<CollisionEntry> entries;  // in the order the sizes were given
};

CollisionSweep collision_sweep(const EncodingConfig& base, std::span<const std::uint32_t> table_sizes,
                               const DecoderSpec& decoder, const OptimizerSpec& opt, std::uint64_t seed,
                               const PointPsfOptions& options = {});

void write_psf_map_csv(std::ostream& os, const PSFMap& map);
void write_fwhm_by_angle_csv(std::ostream& os, std::span<const AngleWidth> widths);
void write_two_point_csv(std::ostream& os, const TwoPointResult& result);
void write_collision_csv(std::ostream& os, const CollisionSweep& sweep);

}  // namespace psflab
