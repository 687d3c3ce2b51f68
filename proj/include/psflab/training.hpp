// Experiment losses: point constraints and image regression.

#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "psflab/field_model.hpp"
#include "psflab/image.hpp"

namespace psflab {

struct Constraint {
  std::vector<double> point;
  double amplitude = 1.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PointTrainResult {
  std::vector<double> loss_trace;  // loss before each step, then the final loss
  double final_loss = 0.0;
  double max_residual = 0.0;       // max |f(x_i) - A_i| after training
};

inline constexpr double kDivergenceLoss = 1e6;

/// Full-batch minimization of mean (f(x_i) - A_i)^2.
PointTrainResult train_points(FieldModel& model, std::span<const Constraint> constraints,
                              const OptimizerSpec& opt);

struct ImageTrainOptions {
  int batch = 4096;
  std::uint64_t seed = 0;
  int checkpoint_every = 250;
};

struct PsnrPoint {
  int step = 0;
  double loss = 0.0;  // last batch loss (full-image MSE at step 0)
  double psnr = 0.0;
};

struct ImageTrainResult {
  std::vector<PsnrPoint> trace;  // includes step 0 and the final step
  double final_psnr() const { return trace.empty() ? 0.0 : trace.back().psnr; }
};

/// PSNR for [0, 1] signals; +infinity when mse is zero.
double psnr_from_mse(double mse);

/// Mean squared error of the model over every pixel center of a square image.
double image_mse(const FieldModel& model, const Image& image);

ImageTrainResult train_image(FieldModel& model, const Image& image, const OptimizerSpec& opt,
                             const ImageTrainOptions& options);

}  // namespace psflab
