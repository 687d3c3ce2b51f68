// Growth-factor planning from a target empirical FWHM.

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace psflab {

/// Arithmetic mean resolution N_min (b^L - 1) / (L (b - 1)); N_min for L = 1.
double n_avg(int levels, double n_min, double growth);

class Unachievable : public std::domain_error {
 public:
  Unachievable(const std::string& what, double lo, double hi)
      : std::domain_error(what), fwhm_lo(lo), fwhm_hi(hi) {}
  double fwhm_lo;  // finest reachable FWHM (b = 8)
  double fwhm_hi;  // coarsest reachable FWHM (b -> 1)
};

/// Smallest accepted total broadening, the ideal composite factor.
inline constexpr double kMinBeta = 1.1808;

struct PlanRequest {
  double target_fwhm = 0.0;
  int levels = 16;
  double n_min = 16.0;
  double beta = 3.0;
  int dim = 2;
  std::uint32_t table_size = 1u << 19;
  std::optional<double> pixel_pitch;

  void validate() const;
};

inline constexpr double kGrowthLo = 1.0 + 1e-9;
inline constexpr double kGrowthHi = 8.0;

struct PlanResult {
  double growth = 0.0;
  double n_avg = 0.0;
  double fwhm_axis = 0.0;
  double fwhm_diag = 0.0;
  double d_crit = 0.0;
  std::vector<double> load_factors;  // (N_l + 1)^D / T per level
};

/// Bisection on b in (1, 8] until beta / n_avg(b) matches the target to 1e-6
/// relative. Throws Unachievable outside that range.
PlanResult solve_growth_factor(const PlanRequest& req);

struct PlanReport {
  PlanResult one_pixel;
  std::optional<PlanResult> two_half_pixel;  // absent when 2.5 px is out of range
  double pitch = 0.0;
  std::string text;
};

/// Plans for a FWHM of one pixel and of 2.5 pixels. The pitch is the request's
/// pixel_pitch, or target_fwhm when unset. Only the one-pixel plan must be
/// achievable.
PlanReport plan_report(const PlanRequest& req);

/// {b_1px, b_2p5px, n_avg, fwhm_axis, fwhm_diag, d_crit_est, load_factors[]},
/// with the derived figures taken from the one-pixel plan; b_2p5px may be null.
nlohmann::json plan_json(const PlanReport& report);

}  // namespace psflab
