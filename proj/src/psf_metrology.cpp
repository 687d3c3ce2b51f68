#include "psflab/psf_metrology.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>

#include "psflab/parallel.hpp"

namespace psflab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_window(std::span<const double> x0, double half_extent) {
  for (double c : x0)
    if (c - half_extent < -1e-12 || c + half_extent > 1.0 + 1e-12)
      throw std::invalid_argument(fmt::format("PSF window [{:.4g}, {:.4g}] leaves the unit domain",
                                              c - half_extent, c + half_extent));
}

std::vector<double> unit(std::span<const double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) throw std::invalid_argument("direction must be nonzero");
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

std::vector<std::vector<double>> fan_directions(int dim, int n_angles) {
  std::vector<std::vector<double>> dirs;
  if (dim == 1) {
    dirs.push_back({1.0});
  } else if (dim == 2) {
    for (int k = 0; k < n_angles; ++k) {
      const double a = std::numbers::pi * k / n_angles;
      dirs.push_back({std::cos(a), std::sin(a)});
    }
  } else {
    static const int kDirs[13][3] = {{1, 0, 0},  {0, 1, 0},  {0, 0, 1},  {1, 1, 0},  {1, -1, 0},
                                     {1, 0, 1},  {1, 0, -1}, {0, 1, 1},  {0, 1, -1}, {1, 1, 1},
                                     {1, 1, -1}, {1, -1, 1}, {-1, 1, 1}};
    for (const auto& d : kDirs) {
      const double v[3] = {double(d[0]), double(d[1]), double(d[2])};
      dirs.push_back(unit(v));
    }
  }
  return dirs;
}

std::vector<double> axis_vector(int dim, int axis) {
  if (axis < 0 || axis >= dim) throw std::invalid_argument("axis out of range");
  std::vector<double> e(dim, 0.0);
  e[axis] = 1.0;
  return e;
}

std::vector<double> shifted(std::span<const double> c, int axis, double delta) {
  std::vector<double> p(c.begin(), c.end());
  p[axis] += delta;
  return p;
}

}  // namespace

double PSFMap::at(std::span<const int> idx) const {
  std::size_t flat = 0;
  for (int d = 0; d < dim; ++d) flat = flat * samples + idx[d];
  return values[flat];
}

double PSFMap::center_value() const {
  std::array<int, kMaxDim> idx;
  idx.fill(samples / 2);
  return at(std::span<const int>(idx.data(), dim));
}

double PSFMap::interpolate(std::span<const double> offset) const {
  const double h = spacing();
  std::array<int, kMaxDim> base{};
  std::array<double, kMaxDim> frac{};
  for (int d = 0; d < dim; ++d) {
    const double g = (offset[d] + half_extent) / h;
    if (!(g >= -1e-9 && g <= samples - 1 + 1e-9)) return kNaN;
    const int i = std::clamp(static_cast<int>(std::floor(g)), 0, samples - 2);
    base[d] = i;
    frac[d] = std::clamp(g - i, 0.0, 1.0);
  }
  double acc = 0.0;
  std::array<int, kMaxDim> idx{};
  for (int corner = 0; corner < (1 << dim); ++corner) {
    double w = 1.0;
    for (int d = 0; d < dim; ++d) {
      const int bit = (corner >> d) & 1;
      idx[d] = base[d] + bit;
      w *= bit ? frac[d] : 1.0 - frac[d];
    }
    if (w != 0.0) acc += w * at(std::span<const int>(idx.data(), dim));
  }
  return acc;
}

double default_half_extent(const LevelSchedule& schedule) {
  return kernel_support(KernelKind::kBSpline) / schedule.n_min;
}

PSFMap sample_psf(const Field& field, std::span<const double> x0, double half_extent, int samples,
                  int workers) {
  const int dim = static_cast<int>(x0.size());
  if (dim < 1 || dim > kMaxDim) throw std::invalid_argument("PSF maps support 1 to 3 dimensions");
  if (samples < 3 || samples % 2 == 0) throw std::invalid_argument("PSF sample count must be odd and >= 3");
  if (!(half_extent > 0.0)) throw std::invalid_argument("PSF half-extent must be positive");
  check_window(x0, half_extent);

  PSFMap map;
  map.dim = dim;
  map.center.assign(x0.begin(), x0.end());
  map.half_extent = half_extent;
  map.samples = samples;
  map.raw_peak = field(x0);
  if (!std::isfinite(map.raw_peak) || std::abs(map.raw_peak) < 1e-12)
    throw MetrologyError("field vanishes at the constraint point; cannot peak-normalize");

  std::size_t total = 1;
  for (int d = 0; d < dim; ++d) total *= samples;
  map.values.assign(total, 0.0);
  const std::size_t row = total / samples;
  parallel_for(static_cast<std::size_t>(samples), workers, [&](std::size_t i0) {
    std::array<double, kMaxDim> x{};
    for (std::size_t r = 0; r < row; ++r) {
      std::size_t flat = i0 * row + r;
      std::size_t rem = flat;
      for (int d = dim - 1; d >= 0; --d) {
        const int i = static_cast<int>(rem % samples);
        rem /= samples;
        x[d] = map.center[d] + map.offset(i);
      }
      map.values[flat] = field(std::span<const double>(x.data(), dim)) / map.raw_peak;
    }
  });
  return map;
}

PSFMap sample_psf(const FieldModel& model, std::span<const double> x0, double half_extent, int samples,
                  int workers) {
  return sample_psf([&model](std::span<const double> x) { return model.value(x); }, x0, half_extent, samples,
                    workers);
}

Probe map_probe(const PSFMap& map) {
  Probe p;
  p.dim = map.dim;
  p.value = [&map](std::span<const double> u) { return map.interpolate(u); };
  p.max_radius = map.half_extent * std::sqrt(static_cast<double>(map.dim));
  p.step = 0.5 * map.spacing();
  return p;
}

Probe field_probe(const Field& field, std::span<const double> x0, double max_radius, double step) {
  const double peak = field(x0);
  if (!std::isfinite(peak) || std::abs(peak) < 1e-12)
    throw MetrologyError("field vanishes at the constraint point; cannot peak-normalize");
  Probe p;
  p.dim = static_cast<int>(x0.size());
  p.max_radius = max_radius;
  p.step = step;
  p.value = [field, center = std::vector<double>(x0.begin(), x0.end()), peak](std::span<const double> u) {
    std::array<double, kMaxDim> x{};
    for (std::size_t d = 0; d < center.size(); ++d) {
      x[d] = center[d] + u[d];
      if (x[d] < 0.0 || x[d] > 1.0) return kNaN;
    }
    return field(std::span<const double>(x.data(), center.size())) / peak;
  };
  return p;
}

double crossing_distance(const Probe& probe, std::span<const double> direction, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("amplitude level must lie in (0, 1)");
  if (static_cast<int>(direction.size()) != probe.dim) throw std::invalid_argument("direction dimension mismatch");
  const auto dir = unit(direction);
  std::array<double, kMaxDim> u{};
  const std::span<double> us(u.data(), probe.dim);
  double prev = probe.value(us);
  const int n = static_cast<int>(std::ceil(probe.max_radius / probe.step));
  for (int k = 1; k <= n; ++k) {
    const double r = k * probe.step;
    for (int d = 0; d < probe.dim; ++d) u[d] = r * dir[d];
    const double v = probe.value(us);
    if (std::isnan(v)) break;
    if (v < alpha) return r - probe.step + probe.step * (prev - alpha) / (prev - v);
    prev = v;
  }
  throw MetrologyError(fmt::format("no crossing of level {} within the window", alpha));
}

double width_along(const Probe& probe, std::span<const double> direction, double alpha) {
  std::vector<double> back(direction.begin(), direction.end());
  for (double& x : back) x = -x;
  return crossing_distance(probe, direction, alpha) + crossing_distance(probe, back, alpha);
}

double fwhm_along(const PSFMap& map, double angle_rad) {
  if (map.dim != 2) throw std::invalid_argument("angle form of fwhm_along needs a 2D map");
  const double dir[2] = {std::cos(angle_rad), std::sin(angle_rad)};
  return width_along(map_probe(map), dir);
}

double fwhm_along(const PSFMap& map, std::span<const double> direction) {
  return width_along(map_probe(map), direction);
}

std::vector<AngleWidth> fwhm_by_angle(const PSFMap& map, int n_angles, double alpha) {
  if (map.dim != 2) throw std::invalid_argument("fwhm_by_angle needs a 2D map");
  if (n_angles < 1) throw std::invalid_argument("need at least one angle");
  const Probe probe = map_probe(map);
  std::vector<AngleWidth> out;
  for (int k = 0; k < n_angles; ++k) {
    const double a = std::numbers::pi * k / n_angles;
    const double dir[2] = {std::cos(a), std::sin(a)};
    out.push_back({180.0 * k / n_angles, width_along(probe, dir, alpha)});
  }
  return out;
}

std::vector<double> anisotropy_profile(const Probe& probe, std::span<const double> alphas, int n_angles) {
  if (n_angles < 2) throw std::invalid_argument("anisotropy needs at least two angles");
  const auto dirs = fan_directions(probe.dim, n_angles);
  std::vector<double> out;
  for (double alpha : alphas) {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& d : dirs) {
      const double w = width_along(probe, d, alpha);
      lo = std::min(lo, w);
      hi = std::max(hi, w);
    }
    out.push_back(hi / lo);
  }
  return out;
}

std::vector<double> anisotropy_profile(const PSFMap& map, std::span<const double> alphas, int n_angles) {
  return anisotropy_profile(map_probe(map), alphas, n_angles);
}

double axis_fwhm(const Probe& probe) {
  double sum = 0.0;
  for (int d = 0; d < probe.dim; ++d) sum += width_along(probe, axis_vector(probe.dim, d));
  return sum / probe.dim;
}

double diagonal_fwhm(const Probe& probe) {
  return width_along(probe, std::vector<double>(probe.dim, 1.0));
}

double fit_beta_emp(const PSFMap& map, const LevelSchedule& schedule) {
  return schedule.n_avg() * axis_fwhm(map_probe(map));
}

double snr_db(const PSFMap& map, double fwhm_axis) {
  if (!(fwhm_axis > 0.0)) throw std::invalid_argument("snr_db needs a positive axis FWHM");
  const double r_min = 3.0 * fwhm_axis;
  double sum = 0.0;
  std::size_t count = 0;
  std::array<int, kMaxDim> idx{};
  for (std::size_t flat = 0; flat < map.values.size(); ++flat) {
    std::size_t rem = flat;
    double r2 = 0.0;
    for (int d = map.dim - 1; d >= 0; --d) {
      idx[d] = static_cast<int>(rem % map.samples);
      rem /= map.samples;
      const double o = map.offset(idx[d]);
      r2 += o * o;
    }
    if (r2 > r_min * r_min) {
      sum += map.values[flat] * map.values[flat];
      ++count;
    }
  }
  if (count == 0) throw MetrologyError("window too small to contain a noise region beyond 3x FWHM");
  const double rms = std::sqrt(sum / static_cast<double>(count));
  if (rms < 1e-12) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(std::abs(map.center_value()) / rms);
}

double PSFMetrics::anisotropy_at(double alpha) const {
  for (std::size_t i = 0; i < alphas.size(); ++i)
    if (std::abs(alphas[i] - alpha) < 1e-12) return anisotropy[i];
  throw std::out_of_range(fmt::format("anisotropy not measured at level {}", alpha));
}

PSFMetrics measure_psf(const Probe& probe, const LevelSchedule& schedule, const MeasureOptions& options) {
  PSFMetrics m;
  m.fwhm_axis = axis_fwhm(probe);
  m.fwhm_diag = diagonal_fwhm(probe);
  m.alphas = options.alphas;
  m.anisotropy = anisotropy_profile(probe, options.alphas, options.n_angles);
  m.beta_emp = schedule.n_avg() * m.fwhm_axis;
  m.snr_db = kNaN;
  return m;
}

PSFMetrics measure_psf(const PSFMap& map, const LevelSchedule& schedule, const MeasureOptions& options) {
  PSFMetrics m = measure_psf(map_probe(map), schedule, options);
  if (map.dim == 2) m.fwhm_by_angle = fwhm_by_angle(map, options.n_angles);
  try {
    m.snr_db = snr_db(map, m.fwhm_axis);
  } catch (const MetrologyError&) {
    m.snr_db = kNaN;
  }
  return m;
}

std::vector<double> jittered_center(int dim, std::uint64_t seed, double jitter) {
  if (!(jitter >= 0.0 && jitter < 0.5)) throw std::invalid_argument("jitter must lie in [0, 0.5)");
  std::mt19937_64 rng(seed ^ 0xC3A5C85C97CB3127ull);
  std::uniform_real_distribution<double> u(-jitter, jitter);
  std::vector<double> c(dim);
  for (double& x : c) x = 0.5 + (jitter > 0.0 ? u(rng) : 0.0);
  return c;
}

PointPsfRun point_psf_experiment(const EncodingConfig& config, const DecoderSpec& decoder,
                                 const OptimizerSpec& opt, std::uint64_t seed, const PointPsfOptions& options) {
  const LevelSchedule schedule = config.schedule();
  const double half = options.half_extent > 0.0 ? options.half_extent : default_half_extent(schedule);
  PointPsfRun run;
  run.x0 = jittered_center(config.dim, seed, options.jitter);
  check_window(run.x0, half);

  FieldModel model(config, decoder, seed);
  const Constraint c{run.x0, options.amplitude};
  run.train = train_points(model, std::span<const Constraint>(&c, 1), opt);

  if (config.dim == 3) {
    const Field f = [&model](std::span<const double> x) { return model.value(x); };
    run.metrics = measure_psf(field_probe(f, run.x0, half, half / options.ray_steps), schedule, options.measure);
  } else {
    run.map = sample_psf(model, run.x0, half, options.samples, options.workers);
    run.metrics = measure_psf(*run.map, schedule, options.measure);
  }
  return run;
}

double dip_depth(double midpoint, double peak_a, double peak_b) {
  const double peak = 0.5 * (peak_a + peak_b);
  if (!(std::abs(peak) > 0.0)) return 0.0;
  return std::clamp(1.0 - midpoint / peak, 0.0, 1.0);
}

std::optional<double> critical_distance(std::span<const TwoPointEntry> entries, double threshold) {
  const TwoPointEntry* prev = nullptr;
  for (const auto& e : entries) {
    if (!e.ok) continue;
    if (e.dip > threshold) {
      if (!prev) return e.d;
      const double t = (threshold - prev->dip) / (e.dip - prev->dip);
      return prev->d + std::clamp(t, 0.0, 1.0) * (e.d - prev->d);
    }
    prev = &e;
  }
  return std::nullopt;
}

TwoPointResult two_point_experiment(const EncodingConfig& config, const DecoderSpec& decoder,
                                    const OptimizerSpec& opt, std::span<const double> separations,
                                    const TwoPointOptions& options) {
  if (!std::is_sorted(separations.begin(), separations.end()))
    throw std::invalid_argument("separations must be sorted ascending");
  const auto center = jittered_center(config.dim, options.seed, options.jitter);
  const double half = default_half_extent(config.schedule());
  TwoPointResult result;
  result.threshold = options.threshold;
  {
    FieldModel single(config, decoder, options.seed);
    const Constraint c{center, options.amplitude};
    train_points(single, std::span<const Constraint>(&c, 1), opt);
    const Field f = [&single](std::span<const double> x) { return single.value(x); };
    result.fwhm = width_along(field_probe(f, center, half, half / 1024), axis_vector(config.dim, options.axis));
  }
  for (double sep : separations) {
    TwoPointEntry e;
    const double d = options.relative ? sep * result.fwhm : sep;
    e.d = d;
    e.f_norm = d / result.fwhm;
    try {
      FieldModel model(config, decoder, options.seed);
      const auto a = shifted(center, options.axis, 0.5 * d);
      const auto b = shifted(center, options.axis, -0.5 * d);
      const std::vector<Constraint> cs{{a, options.amplitude}, {b, options.amplitude}};
      train_points(model, cs, opt);
      e.midpoint = model.value(center);
      e.dip = dip_depth(e.midpoint, model.value(a), model.value(b));
    } catch (const std::exception& ex) {
      e.ok = false;
      e.dip = kNaN;
      e.error = ex.what();
    }
    result.entries.push_back(e);
  }
  result.d_crit = critical_distance(result.entries, options.threshold);
  return result;
}

DipoleResult dipole_experiment(const EncodingConfig& config, const DecoderSpec& decoder, const OptimizerSpec& opt,
                               double d, const DipoleOptions& options) {
  if (!(d > 0.0)) throw std::invalid_argument("dipole separation must be positive");
  if (options.samples < 3 || options.samples % 2 == 0) throw std::invalid_argument("dipole samples must be odd");
  const auto center = jittered_center(config.dim, options.seed, options.jitter);
  const double half = default_half_extent(config.schedule());
  const auto e = axis_vector(config.dim, options.axis);

  FieldModel single(config, decoder, options.seed);
  {
    const Constraint c{center, options.amplitude};
    train_points(single, std::span<const Constraint>(&c, 1), opt);
  }
  const Field psf = [&single](std::span<const double> x) { return single.value(x); };
  DipoleResult r;
  r.fwhm = width_along(field_probe(psf, center, half, half / 1024), e);
  const double peak = single.value(center);
  const double w = options.half_width > 0.0 ? options.half_width : 2.0 * r.fwhm;
  const double h = options.gradient_step > 0.0 ? options.gradient_step : 2.0 * half / (PointPsfOptions{}.samples - 1);

  FieldModel model(config, decoder, options.seed);
  const std::vector<Constraint> cs{{shifted(center, options.axis, 0.5 * d), options.amplitude},
                                   {shifted(center, options.axis, -0.5 * d), -options.amplitude}};
  train_points(model, cs, opt);

  const int n = options.samples;
  double pp = 0.0, mm = 0.0, pm = 0.0, pmax = 0.0;
  for (int j = 0; j < n; ++j) {
    const double s = -w + 2.0 * w * j / (n - 1);
    const double grad = (single.value(shifted(center, options.axis, s + h)) -
                         single.value(shifted(center, options.axis, s - h))) / (2.0 * h * peak);
    const double p = model.value(shifted(center, options.axis, s));
    const double m = -d * grad;
    r.offsets.push_back(s);
    r.profile.push_back(p);
    r.model.push_back(m);
    pp += p * p;
    mm += m * m;
    pm += p * m;
    pmax = std::max(pmax, std::abs(p));
  }
  r.cosine = (pp > 0.0 && mm > 0.0) ? pm / std::sqrt(pp * mm) : 0.0;
  for (int j = 0; j < n; ++j) r.antisymmetry = std::max(r.antisymmetry, std::abs(r.profile[j] + r.profile[n - 1 - j]));
  if (pmax > 0.0) {
    r.antisymmetry /= pmax;
    r.midpoint = r.profile[n / 2] / pmax;
  }
  return r;
}

CollisionSweep collision_sweep(const EncodingConfig& base, std::span<const std::uint32_t> table_sizes,
                               const DecoderSpec& decoder, const OptimizerSpec& opt, std::uint64_t seed,
                               const PointPsfOptions& options) {
  if (table_sizes.empty()) throw std::invalid_argument("collision sweep needs at least one table size");
  CollisionSweep sweep;
  for (std::uint32_t t : table_sizes) {
    CollisionEntry e;
    e.table_size = t;
    try {
      EncodingConfig cfg = base;
      cfg.table_size = t;
      const CollisionAudit audit = audit_collisions(cfg);
      e.load_factor = audit.load_factor();
      e.colliding_fraction = audit.colliding_fraction();
      e.snr_db = point_psf_experiment(cfg, decoder, opt, seed, options).metrics.snr_db;
    } catch (const std::exception& ex) {
      e.ok = false;
      e.snr_db = kNaN;
      e.error = ex.what();
    }
    sweep.entries.push_back(e);
  }
  return sweep;
}

void write_psf_map_csv(std::ostream& os, const PSFMap& map) {
  static const char* kAxes[3] = {"x", "y", "z"};
  for (int d = 0; d < map.dim; ++d) os << kAxes[d] << ',';
  os << "value\n";
  std::array<int, kMaxDim> idx{};
  for (std::size_t flat = 0; flat < map.values.size(); ++flat) {
    std::size_t rem = flat;
    for (int d = map.dim - 1; d >= 0; --d) {
      idx[d] = static_cast<int>(rem % map.samples);
      rem /= map.samples;
    }
    for (int d = 0; d < map.dim; ++d) fmt::print(os, "{:.9g},", map.center[d] + map.offset(idx[d]));
    fmt::print(os, "{:.9g}\n", map.values[flat]);
  }
}

void write_fwhm_by_angle_csv(std::ostream& os, std::span<const AngleWidth> widths) {
  os << "angle_deg,width\n";
  for (const auto& w : widths) fmt::print(os, "{:.9g},{:.9g}\n", w.angle_deg, w.width);
}

void write_two_point_csv(std::ostream& os, const TwoPointResult& result) {
  os << "d,f_norm,dip\n";
  for (const auto& e : result.entries) fmt::print(os, "{:.9g},{:.9g},{:.9g}\n", e.d, e.f_norm, e.dip);
}

void write_collision_csv(std::ostream& os, const CollisionSweep& sweep) {
  os << "T,load_factor,colliding_fraction,snr_db\n";
  for (const auto& e : sweep.entries)
    fmt::print(os, "{},{:.9g},{:.9g},{:.9g}\n", e.table_size, e.load_factor, e.colliding_fraction, e.snr_db);
}

}  // namespace psflab
