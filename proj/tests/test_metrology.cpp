#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "psflab/psf_metrology.hpp"

using namespace psflab;

namespace {

const std::vector<double> kCenter{0.5, 0.5};

Field bspline_stub(double n, double scale = 1.0) {
  return [n, scale](std::span<const double> x) {
    double v = scale;
    for (std::size_t d = 0; d < x.size(); ++d) v *= oracle::bspline(n * (x[d] - 0.5));
    return v;
  };
}

Field tent_stub(double n) {
  return [n](std::span<const double> x) { return oracle::tent(n * (x[0] - 0.5)) * oracle::tent(n * (x[1] - 0.5)); };
}

Field composite_stub(int levels, double n_min, double growth) {
  return [=](std::span<const double> x) {
    double s = 0.0;
    for (int l = 0; l < levels; ++l) {
      const double n = n_min * std::pow(growth, l);
      s += oracle::bspline(n * (x[0] - 0.5)) * oracle::bspline(n * (x[1] - 0.5));
    }
    return s / levels;
  };
}

// Half-max radius of the uniform 1D composite by plain bisection.
double composite_half_width(int levels, double n_min, double growth) {
  double lo = 0.0, hi = 2.0 / n_min;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (oracle::composite(mid, levels, n_min, growth) > 0.5 ? lo : hi) = mid;
  }
  return lo;
}

EncodingConfig trained_config(std::uint32_t t) {
  EncodingConfig c;
  c.levels = 10;
  c.n_min = 16.0;
  c.growth = 1.5;
  c.table_size = t;
  return c;
}

OptimizerSpec point_opt(int steps = 1000) {
  OptimizerSpec o;
  o.lr = 1e-2;
  o.steps = steps;
  return o;
}

}  // namespace

TEST_CASE("sampling an analytic stub") {
  const double n = 16.0;
  const PSFMap map = sample_psf(bspline_stub(n), kCenter, 2.0 / n, 65);
  CHECK(map.center_value() == 1.0);
  CHECK(map.samples == 65);
  CHECK(map.values.size() == 65u * 65u);
  double worst = 0.0;
  for (int i = 0; i < 65; ++i)
    for (int j = 0; j < 65; ++j) {
      const int idx[2] = {i, j};
      const double expect = oracle::bspline(n * map.offset(i)) * oracle::bspline(n * map.offset(j));
      worst = std::max(worst, std::abs(map.at(idx) - expect));
    }
  CHECK(worst <= 1e-9);
  const double inside[2] = {0.01, -0.02};
  CHECK(map.interpolate(inside) == doctest::Approx(oracle::bspline(n * 0.01) * oracle::bspline(n * 0.02)).epsilon(0.02).scale(0));
  const double outside[2] = {0.2, 0.0};
  CHECK(std::isnan(map.interpolate(outside)));
}

TEST_CASE("sampling preconditions") {
  CHECK_THROWS_AS(sample_psf(bspline_stub(16), kCenter, 0.6, 33), std::invalid_argument);
  CHECK_THROWS_AS(sample_psf(bspline_stub(16), kCenter, 0.1, 32), std::invalid_argument);
  const Field zero = [](std::span<const double>) { return 0.0; };
  CHECK_THROWS_AS(sample_psf(zero, kCenter, 0.1, 33), MetrologyError);
  CHECK(default_half_extent({10, 16, 1.5}) == doctest::Approx(0.125).scale(0));
}

TEST_CASE("peak normalization makes metrics scale invariant") {
  const LevelSchedule s{1, 16, 2};
  const PSFMap a = sample_psf(bspline_stub(16), kCenter, 0.125, 129);
  const PSFMap b = sample_psf(bspline_stub(16, -7.3), kCenter, 0.125, 129);
  for (std::size_t i = 0; i < a.values.size(); ++i) REQUIRE(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-12));
  CHECK(b.raw_peak == doctest::Approx(-7.3).scale(0));
  const auto ma = measure_psf(a, s), mb = measure_psf(b, s);
  CHECK(ma.fwhm_axis == doctest::Approx(mb.fwhm_axis).epsilon(1e-12).scale(0));
  CHECK(ma.anisotropy[0] == doctest::Approx(mb.anisotropy[0]).epsilon(1e-12).scale(0));
}

TEST_CASE("half-max widths of kernel stubs") {
  const double n = 16.0;
  const PSFMap b = sample_psf(bspline_stub(n), kCenter, 2.0 / n, 257);
  const double u_half = oracle::bspline_inverse(0.5);
  CHECK(std::abs(fwhm_along(b, 0.0) - 2.0 * u_half / n) <= b.spacing());
  CHECK(std::abs(fwhm_along(b, std::numbers::pi / 2) - 2.0 * u_half / n) <= b.spacing());

  const PSFMap t = sample_psf(tent_stub(n), kCenter, 2.0 / n, 257);
  CHECK(std::abs(fwhm_along(t, 0.0) - 1.0 / n) <= t.spacing());

  const std::vector<double> diag{1.0, 1.0};
  const double x2 = oracle::bspline_inverse(std::sqrt(0.5));
  CHECK(std::abs(fwhm_along(b, diag) - 2.0 * std::sqrt(2.0) * x2 / n) <= b.spacing());
}

TEST_CASE("ideal composite map widths") {
  const LevelSchedule s{10, 16.0, 1.5};
  const PSFMap m = sample_psf(composite_stub(10, 16.0, 1.5), kCenter, default_half_extent(s), 257);
  const double oracle_width = 2.0 * composite_half_width(10, 16.0, 1.5);
  CHECK(std::abs(axis_fwhm(map_probe(m)) - oracle_width) <= m.spacing());
  CHECK(fit_beta_emp(m, s) == doctest::Approx(s.n_avg() * axis_fwhm(map_probe(m))).scale(0));
  CHECK(std::abs(fit_beta_emp(m, s) - s.n_avg() * oracle_width) <= s.n_avg() * m.spacing());
}

TEST_CASE("weighted composite beta follows beta_opt") {
  const LevelSchedule s{10, 16.0, 1.5};
  const double target = 2.0;
  const double gamma = bisect([&](double g) { return beta_opt_of_gamma(g, s) - target; }, 0.0, 8.0, 1e-9);
  const auto w = spectral_weights(gamma, s);
  const Field f = [&](std::span<const double> x) {
    const double v[2] = {x[0] - 0.5, x[1] - 0.5};
    return ideal_psf(v, s, w);
  };
  const PSFMap weighted = sample_psf(f, kCenter, default_half_extent(s), 257);
  const PSFMap uniform = sample_psf(composite_stub(10, 16.0, 1.5), kCenter, default_half_extent(s), 257);
  CHECK(fit_beta_emp(weighted, s) / fit_beta_emp(uniform, s) == doctest::Approx(target).epsilon(0.03).scale(0));
}

TEST_CASE("anisotropy of analytic stubs") {
  const Field gauss = [](std::span<const double> x) {
    const double dx = x[0] - 0.5, dy = x[1] - 0.5;
    return std::exp(-(dx * dx + dy * dy) / (2.0 * 0.03 * 0.03));
  };
  const PSFMap g = sample_psf(gauss, kCenter, 0.15, 257);
  const double alphas[3] = {0.25, 0.5, 0.75};
  for (double r : anisotropy_profile(g, alphas)) CHECK(r == doctest::Approx(1.0).epsilon(0.02).scale(0));

  // A single separable b-spline level is nearly round at half maximum.
  const PSFMap b = sample_psf(bspline_stub(16), kCenter, 0.125, 257);
  const double half[1] = {0.5};
  const double exact = std::sqrt(bspline_distance_sq(2, 0.5) / bspline_distance_sq(1, 0.5));
  const double diag = fwhm_along(b, std::vector<double>{1.0, 1.0}), axis = fwhm_along(b, 0.0);
  CHECK(diag / axis == doctest::Approx(exact).epsilon(0.02).scale(0));
  CHECK(anisotropy_profile(b, half)[0] < 1.02);

  // Fan widths of the composite agree with a continuous ray bisection, and
  // the diagonals are the widest directions.
  const LevelSchedule s{10, 16.0, 1.5};
  const Field comp = composite_stub(10, 16.0, 1.5);
  const PSFMap c = sample_psf(comp, kCenter, default_half_extent(s), 257);
  const auto widths = fwhm_by_angle(c);
  CHECK(widths.size() == 64);
  for (const auto& w : widths) {
    const double th = w.angle_deg * std::numbers::pi / 180.0;
    auto along = [&](double r) {
      const double x[2] = {0.5 + r * std::cos(th), 0.5 + r * std::sin(th)};
      return comp(x) - 0.5;
    };
    double lo = 0.0, hi = 0.125;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      (along(mid) > 0.0 ? lo : hi) = mid;
    }
    CHECK(std::abs(w.width - 2.0 * lo) <= c.spacing());
  }
  const auto wide = std::max_element(widths.begin(), widths.end(),
                                     [](const AngleWidth& a, const AngleWidth& b) { return a.width < b.width; });
  CHECK((std::abs(wide->angle_deg - 45.0) <= 5.0 || std::abs(wide->angle_deg - 135.0) <= 5.0));
  CHECK(anisotropy_profile(c, half)[0] > 1.0);
}

TEST_CASE("crossing errors") {
  const Field flat = [](std::span<const double>) { return 1.0; };
  const PSFMap m = sample_psf(flat, kCenter, 0.1, 33);
  CHECK_THROWS_AS(fwhm_along(m, 0.0), MetrologyError);
  const Probe p = map_probe(m);
  const double dir[2] = {1.0, 0.0};
  CHECK_THROWS_AS(crossing_distance(p, dir, 1.0), std::invalid_argument);
}

TEST_CASE("field probes measure the same widths as maps") {
  const double n = 16.0;
  const Probe p = field_probe(bspline_stub(n), kCenter, 2.0 / n, 1e-4);
  const double u_half = oracle::bspline_inverse(0.5);
  CHECK(axis_fwhm(p) == doctest::Approx(2.0 * u_half / n).epsilon(1e-3).scale(0));

  const std::vector<double> c3{0.5, 0.5, 0.5};
  const Probe p3 = field_probe(bspline_stub(n), c3, 2.0 / n, 1e-4);
  const double x3 = oracle::bspline_inverse(std::cbrt(0.5));
  CHECK(diagonal_fwhm(p3) == doctest::Approx(2.0 * std::sqrt(3.0) * x3 / n).epsilon(1e-3).scale(0));
  const double half[1] = {0.5};
  CHECK(anisotropy_profile(p3, half)[0] >= 1.0);
}

TEST_CASE("signal to noise ratio") {
  const double n = 16.0;
  PSFMap m = sample_psf(bspline_stub(n), kCenter, 0.45, 181);
  const double fwhm = axis_fwhm(map_probe(m));
  CHECK(std::isinf(snr_db(m, fwhm)));

  std::mt19937_64 rng(3);
  const double a = 0.01 * std::sqrt(3.0);
  std::uniform_real_distribution<double> noise(-a, a);
  for (int i = 0; i < m.samples; ++i)
    for (int j = 0; j < m.samples; ++j) {
      const double r = std::hypot(m.offset(i), m.offset(j));
      if (r > 3.0 * fwhm) m.values[static_cast<std::size_t>(i) * m.samples + j] += noise(rng);
    }
  CHECK(snr_db(m, fwhm) == doctest::Approx(40.0).epsilon(1.0 / 40.0).scale(0));

  const PSFMap tight = sample_psf(bspline_stub(n), kCenter, 0.05, 33);
  CHECK_THROWS_AS(snr_db(tight, 0.1), MetrologyError);
}

TEST_CASE("jittered centers") {
  const auto a = jittered_center(2, 5, 0.05), b = jittered_center(2, 5, 0.05), c = jittered_center(3, 6, 0.05);
  CHECK(a == b);
  CHECK(c.size() == 3);
  for (double v : c) {
    CHECK(v >= 0.45);
    CHECK(v <= 0.55);
  }
  CHECK(jittered_center(2, 5, 0.0) == kCenter);
}

TEST_CASE("trained response peaks at the constraint") {
  PointPsfOptions po;
  const auto run = point_psf_experiment(trained_config(1u << 18), DecoderSpec::linear(), point_opt(), 1, po);
  REQUIRE(run.map);
  const PSFMap& m = *run.map;
  const auto best = std::max_element(m.values.begin(), m.values.end()) - m.values.begin();
  const int bi = static_cast<int>(best / m.samples), bj = static_cast<int>(best % m.samples);
  CHECK(std::abs(bi - m.samples / 2) <= 1);
  CHECK(std::abs(bj - m.samples / 2) <= 1);
  CHECK(run.metrics.fwhm_by_angle.size() == 64);
  CHECK(run.metrics.beta_emp == doctest::Approx(trained_config(1).schedule().n_avg() * run.metrics.fwhm_axis).scale(0));
  CHECK(run.metrics.fwhm_diag > run.metrics.fwhm_axis);
}

TEST_CASE("fan widths are symmetric about the diagonal for an aligned constraint") {
  PointPsfOptions po;
  po.jitter = 0.0;
  const auto run = point_psf_experiment(trained_config(1u << 18), DecoderSpec::linear(), point_opt(), 0, po);
  const auto& w = run.metrics.fwhm_by_angle;
  const double sp = run.map->spacing();
  for (int k = 0; k < 64; ++k) {
    const int mirror = k <= 32 ? 32 - k : 96 - k;
    CHECK(std::abs(w[k].width - w[mirror].width) <= sp);
  }
}

TEST_CASE("collisions lower the SNR") {
  PointPsfOptions po;
  const auto small = point_psf_experiment(trained_config(1u << 8), DecoderSpec::linear(), point_opt(), 0, po);
  const auto large = point_psf_experiment(trained_config(1u << 16), DecoderSpec::linear(), point_opt(), 0, po);
  CHECK(small.metrics.snr_db < large.metrics.snr_db);
}

TEST_CASE("3D runs are measured along rays") {
  EncodingConfig c = trained_config(1u << 16);
  c.dim = 3;
  c.levels = 6;
  PointPsfOptions po;
  po.ray_steps = 256;
  const auto run = point_psf_experiment(c, DecoderSpec::linear(), point_opt(300), 0, po);
  CHECK_FALSE(run.map);
  CHECK(std::isnan(run.metrics.snr_db));
  CHECK(run.metrics.fwhm_by_angle.empty());
  CHECK(run.metrics.fwhm_axis > 0.0);
}

TEST_CASE("dip depth and critical distance") {
  CHECK(dip_depth(1.0, 1.0, 1.0) == 0.0);
  CHECK(dip_depth(1.2, 1.0, 1.0) == 0.0);
  CHECK(dip_depth(0.0, 1.0, 1.0) == 1.0);
  CHECK(dip_depth(0.5, 1.0, 0.0) == 0.0);
  CHECK(dip_depth(0.75, 1.0, 1.0) == doctest::Approx(0.25).scale(0));

  std::vector<TwoPointEntry> es(4);
  es[0].d = 0.0, es[0].dip = 0.0;
  es[1].d = 1.0, es[1].dip = 0.0;
  es[2].d = 2.0, es[2].dip = 0.03;
  es[3].d = 3.0, es[3].dip = 0.2;
  CHECK(*critical_distance(es, 0.01) == doctest::Approx(1.0 + 1.0 / 3.0).scale(0));
  CHECK_FALSE(critical_distance(es, 0.5));
  es[1].ok = false;
  es[1].dip = std::nan("");
  CHECK(*critical_distance(es, 0.01) == doctest::Approx(2.0 / 3.0).scale(0));
  CHECK(*critical_distance(std::span(es).subspan(2), 0.01) == 2.0);
}

TEST_CASE("two-point experiment") {
  EncodingConfig c = trained_config(1u << 16);
  c.levels = 8;
  c.growth = 1.4;
  TwoPointOptions to;
  to.relative = true;
  const double f[3] = {0.0, 1.0, 4.0};
  const auto r = two_point_experiment(c, DecoderSpec::linear(), point_opt(), f, to);
  REQUIRE(r.entries.size() == 3);
  CHECK(r.fwhm > 0.0);
  CHECK(r.entries[0].dip == 0.0);
  CHECK(r.entries[1].f_norm == doctest::Approx(1.0).scale(0));
  CHECK(r.entries[2].d == doctest::Approx(4.0 * r.fwhm).scale(0));
  CHECK(r.entries[2].dip > r.entries[1].dip);
  for (const auto& e : r.entries) {
    CHECK(e.ok);
    CHECK(e.dip >= 0.0);
    CHECK(e.dip <= 1.0);
  }
  if (r.d_crit) CHECK(*r.d_crit > 0.0);
  const double unsorted[2] = {1.0, 0.5};
  CHECK_THROWS(two_point_experiment(c, DecoderSpec::linear(), point_opt(), unsorted, to));
}

TEST_CASE("dipole experiment") {
  EncodingConfig c = trained_config(1u << 16);
  c.levels = 8;
  c.growth = 1.4;
  DipoleOptions d0;
  d0.samples = 101;
  // First find the single-point width, then separate by 0.3 of it.
  const auto probe = dipole_experiment(c, DecoderSpec::linear(), point_opt(), 1e-3, d0);
  const auto r = dipole_experiment(c, DecoderSpec::linear(), point_opt(), 0.3 * probe.fwhm, d0);
  CHECK(r.offsets.size() == 101);
  CHECK(r.profile.size() == 101);
  CHECK(r.fwhm == doctest::Approx(probe.fwhm).scale(0));
  CHECK(r.offsets.front() == doctest::Approx(-2.0 * r.fwhm).scale(0));
  CHECK(r.cosine > 0.5);
  CHECK(std::abs(r.midpoint) < 0.3);
  // +A sits on the positive side of the axis.
  CHECK(r.profile[101 / 2 + 5] > 0.0);
  CHECK(r.profile[101 / 2 - 5] < 0.0);
  CHECK_THROWS(dipole_experiment(c, DecoderSpec::linear(), point_opt(), 0.0, d0));
}

TEST_CASE("collision sweep keeps order and flags saturation") {
  EncodingConfig c = trained_config(1);
  c.levels = 6;
  const std::uint32_t sizes[3] = {1u << 14, 1u, 1u << 8};
  const auto sweep = collision_sweep(c, sizes, DecoderSpec::linear(), point_opt(300), 0);
  REQUIRE(sweep.entries.size() == 3);
  CHECK(sweep.entries[0].table_size == (1u << 14));
  CHECK(sweep.entries[1].table_size == 1u);
  CHECK(sweep.entries[1].colliding_fraction == 1.0);
  CHECK(sweep.entries[2].colliding_fraction > sweep.entries[0].colliding_fraction);
  CHECK(sweep.entries[2].load_factor > sweep.entries[0].load_factor);
}

TEST_CASE("collision sweep trends") {
  std::vector<std::uint32_t> sizes;
  for (int l = 8; l <= 18; l += 2) sizes.push_back(1u << l);
  std::vector<CollisionSweep> sweeps;
  for (int levels : {6, 12}) {
    EncodingConfig c = trained_config(1);
    c.levels = levels;
    sweeps.push_back(collision_sweep(c, sizes, DecoderSpec::linear(), point_opt(), 0));
  }
  for (const auto& s : sweeps)
    for (std::size_t i = 1; i < s.entries.size(); ++i) CHECK(s.entries[i].snr_db >= s.entries[i - 1].snr_db - 2.0);
  CHECK(sweeps[1].entries[0].snr_db >= sweeps[0].entries[0].snr_db - 2.0);
  // L=6 touches fewer vertices than the two largest tables hold.
  const auto& free = sweeps[0].entries;
  CHECK(free[4].colliding_fraction == 0.0);
  CHECK(free[5].colliding_fraction == 0.0);
  CHECK(std::abs(free[5].snr_db - free[4].snr_db) <= 3.0);
}

TEST_CASE("csv headers") {
  const PSFMap m = sample_psf(bspline_stub(16), kCenter, 0.125, 5);
  std::ostringstream a, b, c, d;
  write_psf_map_csv(a, m);
  const std::string text = a.str();
  CHECK(text.rfind("x,y,value\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 26);
  write_fwhm_by_angle_csv(b, fwhm_by_angle(sample_psf(bspline_stub(16), kCenter, 0.125, 65), 4));
  CHECK(b.str().rfind("angle_deg,width\n0,", 0) == 0);
  TwoPointResult tp;
  tp.entries.resize(1);
  write_two_point_csv(c, tp);
  CHECK(c.str().rfind("d,f_norm,dip\n", 0) == 0);
  CollisionSweep cs;
  write_collision_csv(d, cs);
  CHECK(d.str() == "T,load_factor,colliding_fraction,snr_db\n");
}
