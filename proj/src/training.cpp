#include "psflab/training.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace psflab {

namespace {

std::array<double, 2> pixel_center(const Image& image, int row, int col) {
  return {(col + 0.5) / image.width, (row + 0.5) / image.height};
}

}  // namespace

PointTrainResult train_points(FieldModel& model, std::span<const Constraint> constraints,
                              const OptimizerSpec& opt) {
  if (constraints.empty()) throw std::invalid_argument("train_points needs at least one constraint");
  for (const auto& c : constraints) {
    if (static_cast<int>(c.point.size()) != model.dim())
      throw std::invalid_argument("constraint dimension does not match the model");
    for (double v : c.point)
      if (v < 0.0 || v > 1.0) throw std::invalid_argument("constraint point outside the unit domain");
  }
  Optimizer optimizer(opt);
  Gradients grads = model.make_gradients();
  const double scale = 1.0 / static_cast<double>(constraints.size());
  PointTrainResult result;
  result.loss_trace.reserve(opt.steps + 1);

  for (int step = 0; step <= opt.steps; ++step) {
    double loss = 0.0;
    const bool last = step == opt.steps;
    for (const auto& c : constraints) {
      if (last) {
        const double r = model.value(c.point) - c.amplitude;
        loss += scale * r * r;
        continue;
      }
      model.accumulate(
          c.point,
          [&](std::span<const double> out, std::span<double> dout) {
            const double r = out[0] - c.amplitude;
            loss += scale * r * r;
            dout[0] = 2.0 * scale * r;
          },
          grads);
    }
    result.loss_trace.push_back(loss);
    if (!std::isfinite(loss) || loss > kDivergenceLoss) {
      std::ostringstream msg;
      msg << "point training diverged at step " << step << " (loss " << loss << ", lr " << opt.lr << ")";
      throw TrainingDiverged(msg.str());
    }
    if (!last) optimizer.step(model, grads);
  }
  result.final_loss = result.loss_trace.back();
  for (const auto& c : constraints)
    result.max_residual = std::max(result.max_residual, std::abs(model.value(c.point) - c.amplitude));
  return result;
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double image_mse(const FieldModel& model, const Image& image) {
  if (model.outputs() != image.channels)
    throw std::invalid_argument("model outputs do not match image channels");
  std::vector<double> out(image.channels);
  double sum = 0.0;
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c) {
      const auto x = pixel_center(image, r, c);
      model.forward(x, out);
      for (int ch = 0; ch < image.channels; ++ch) {
        const double d = out[ch] - image.at(r, c, ch);
        sum += d * d;
      }
    }
  return sum / static_cast<double>(image.data.size());
}

ImageTrainResult train_image(FieldModel& model, const Image& image, const OptimizerSpec& opt,
                             const ImageTrainOptions& options) {
  if (!image.square())
    throw std::invalid_argument("train_image needs a square image; center-crop it first");
  if (model.dim() != 2) throw std::invalid_argument("image regression needs a 2D encoding");
  if (model.outputs() != image.channels)
    throw std::invalid_argument("model outputs do not match image channels");
  if (options.batch < 1) throw std::invalid_argument("batch must be >= 1");

  Optimizer optimizer(opt);
  Gradients grads = model.make_gradients();
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> pick(0, image.height * image.width - 1);
  const int channels = image.channels;
  const double scale = 1.0 / (static_cast<double>(options.batch) * channels);

  ImageTrainResult result;
  const double mse0 = image_mse(model, image);
  result.trace.push_back({0, mse0, psnr_from_mse(mse0)});
  for (int step = 1; step <= opt.steps; ++step) {
    double loss = 0.0;
    for (int b = 0; b < options.batch; ++b) {
      const int idx = pick(rng);
      const int r = idx / image.width, c = idx % image.width;
      const auto x = pixel_center(image, r, c);
      model.accumulate(
          x,
          [&](std::span<const double> out, std::span<double> dout) {
            for (int ch = 0; ch < channels; ++ch) {
              const double d = out[ch] - image.at(r, c, ch);
              loss += scale * d * d;
              dout[ch] = 2.0 * scale * d;
            }
          },
          grads);
    }
    if (!std::isfinite(loss) || loss > kDivergenceLoss)
      throw TrainingDiverged("image training diverged at step " + std::to_string(step));
    optimizer.step(model, grads);
    const bool checkpoint = options.checkpoint_every > 0 && step % options.checkpoint_every == 0;
    if (checkpoint || step == opt.steps) {
      const double mse = image_mse(model, image);
      result.trace.push_back({step, loss, psnr_from_mse(mse)});
    }
  }
  return result;
}

}  // namespace psflab
