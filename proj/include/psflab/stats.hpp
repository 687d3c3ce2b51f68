// Small descriptive statistics used by sweeps and acceptance checks.

#pragma once

#include <span>
#include <vector>

namespace psflab {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Ordinary least squares y = slope * x + intercept. Needs >= 2 distinct x.
LineFit fit_line(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> v);
/// Sample standard deviation (n - 1); zero for fewer than two values.
double stddev(std::span<const double> v);

/// Average ranks (1-based), ties share the mean rank. Infinities rank normally.
std::vector<double> ranks(std::span<const double> v);
/// Spearman rank correlation: Pearson correlation of the average ranks.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace psflab
