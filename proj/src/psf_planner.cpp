#include "psflab/psf_planner.hpp"

#include <fmt/format.h>

#include <cmath>

#include "psflab/kernel_math.hpp"

namespace psflab {

double n_avg(int levels, double n_min, double growth) {
  if (levels < 1) throw std::invalid_argument("levels must be >= 1");
  if (levels == 1) return n_min;
  if (!(growth > 1.0)) throw std::invalid_argument("growth must exceed 1 when levels > 1");
  // expm1 keeps the ratio accurate as growth approaches 1.
  const double lb = std::log(growth);
  return n_min * std::expm1(levels * lb) / (levels * std::expm1(lb));
}

void PlanRequest::validate() const {
  if (!(target_fwhm > 0.0)) throw std::invalid_argument("target FWHM must be positive");
  if (levels < 1) throw std::invalid_argument("levels must be >= 1");
  if (!(n_min > 0.0)) throw std::invalid_argument("n_min must be positive");
  if (!(beta >= kMinBeta)) throw std::invalid_argument(fmt::format("beta must be >= {}", kMinBeta));
  if (dim < 1 || dim > 3) throw std::invalid_argument("dimension must be 1, 2 or 3");
  if (table_size < 1) throw std::invalid_argument("table size must be >= 1");
  if (pixel_pitch && !(*pixel_pitch > 0.0)) throw std::invalid_argument("pixel pitch must be positive");
}

PlanResult solve_growth_factor(const PlanRequest& req) {
  req.validate();
  if (req.levels == 1) throw std::invalid_argument("a single level has no growth factor to solve for");
  auto fwhm_of = [&](double b) { return req.beta / n_avg(req.levels, req.n_min, b); };
  const double hi_fwhm = fwhm_of(kGrowthLo);
  const double lo_fwhm = fwhm_of(kGrowthHi);
  if (req.target_fwhm > hi_fwhm || req.target_fwhm < lo_fwhm)
    throw Unachievable(fmt::format("target FWHM {:.6g} is unachievable with L={}, N_min={:g}: achievable range is "
                                   "[{:.6g}, {:.6g}] for b in (1, {:g}]",
                                   req.target_fwhm, req.levels, req.n_min, lo_fwhm, hi_fwhm, kGrowthHi),
                       lo_fwhm, hi_fwhm);
  // fwhm_of is strictly decreasing in b.
  double lo = kGrowthLo, hi = kGrowthHi;
  double b = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    b = 0.5 * (lo + hi);
    const double f = fwhm_of(b);
    if (std::abs(f - req.target_fwhm) <= 1e-9 * req.target_fwhm) break;
    if (f > req.target_fwhm)
      lo = b;
    else
      hi = b;
    if (hi - lo <= 1e-15 * hi) break;
  }

  PlanResult r;
  r.growth = b;
  r.n_avg = n_avg(req.levels, req.n_min, b);
  r.fwhm_axis = req.beta / r.n_avg;
  r.fwhm_diag = r.fwhm_axis * std::sqrt(anisotropy_ratio(req.dim));
  r.d_crit = r.fwhm_axis;
  const LevelSchedule schedule{req.levels, req.n_min, b};
  for (double n : schedule.resolutions())
    r.load_factors.push_back(std::pow(std::ceil(n) + 1.0, req.dim) / static_cast<double>(req.table_size));
  return r;
}

PlanReport plan_report(const PlanRequest& req) {
  req.validate();
  PlanReport rep;
  rep.pitch = req.pixel_pitch.value_or(req.target_fwhm);
  PlanRequest one = req;
  one.target_fwhm = rep.pitch;
  PlanRequest wide = req;
  wide.target_fwhm = 2.5 * rep.pitch;
  rep.one_pixel = solve_growth_factor(one);
  std::string wide_line;
  try {
    const PlanResult w = solve_growth_factor(wide);
    rep.two_half_pixel = w;
    wide_line = fmt::format("b = {:.6f}  N_avg = {:.4f}  FWHM axis {:.6g}  diag {:.6g}", w.growth, w.n_avg,
                            w.fwhm_axis, w.fwhm_diag);
  } catch (const Unachievable& e) {
    wide_line = e.what();
  }

  double worst = 0.0;
  for (double lf : rep.one_pixel.load_factors) worst = std::max(worst, lf);
  const PlanResult& p = rep.one_pixel;
  rep.text = fmt::format(
      "pixel pitch {:.6g}, L={}, N_min={:g}, beta={:g}, D={}, T={}\n"
      "  1 px target:   b = {:.6f}  N_avg = {:.4f}  FWHM axis {:.6g}  diag {:.6g}  d_crit ~ {:.6g}\n"
      "  2.5 px target: {}\n"
      "  largest per-level load factor at 1 px: {:.4g}\n",
      rep.pitch, req.levels, req.n_min, req.beta, req.dim, req.table_size, p.growth, p.n_avg, p.fwhm_axis,
      p.fwhm_diag, p.d_crit, wide_line, worst);
  return rep;
}

nlohmann::json plan_json(const PlanReport& report) {
  const PlanResult& p = report.one_pixel;
  return nlohmann::json{{"b_1px", p.growth},
                        {"b_2p5px", report.two_half_pixel ? nlohmann::json(report.two_half_pixel->growth)
                                                          : nlohmann::json(nullptr)},
                        {"n_avg", p.n_avg},
                        {"fwhm_axis", p.fwhm_axis},
                        {"fwhm_diag", p.fwhm_diag},
                        {"d_crit_est", p.d_crit},
                        {"load_factors", p.load_factors}};
}

}  // namespace psflab
