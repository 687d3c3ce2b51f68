// Trainable field f(x) = decoder(encode(x)) and its optimizers.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "psflab/hash_encoding.hpp"

namespace psflab {

/// Bias-free ReLU MLP; depth counts hidden layers, depth 0 is a linear map.
struct DecoderSpec {
  int depth = 0;
  int width = 64;
  int outputs = 1;

  static DecoderSpec linear(int outputs = 1) { return {0, 1, outputs}; }
  static DecoderSpec mlp(int depth, int width, int outputs = 1) { return {depth, width, outputs}; }
  void validate() const;
};

enum class OptimizerKind { kAdam, kSgd, kRmsprop };

OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-15;
  double momentum = 0.0;  // sgd / rmsprop
  int steps = 2000;

  void validate() const;
};

/// Accumulates table gradients sparsely: only touched entries are tracked,
/// so clearing costs O(touched) rather than O(L * T * F).
class TableGradient {
 public:
  void resize(std::size_t n);
  void add(std::size_t index, double g) {
    if (!mask_[index]) {
      mask_[index] = 1;
      touched_.push_back(index);
    }
    values_[index] += g;
  }
  double operator[](std::size_t index) const { return values_[index]; }
  std::span<const std::size_t> touched() const { return touched_; }
  std::size_t size() const { return values_.size(); }
  const double* data() const { return values_.data(); }
  void clear();

 private:
  std::vector<double> values_;
  std::vector<std::uint8_t> mask_;
  std::vector<std::size_t> touched_;
};

struct Gradients {
  TableGradient table;
  std::vector<double> decoder;
  void clear();
};

class FieldModel {
 public:
  /// Tables are seeded from `seed` (overriding config.seed); decoder weights
  /// are He-normal from a stream derived from the same seed.
  FieldModel(const EncodingConfig& config, const DecoderSpec& decoder, std::uint64_t seed);

  const HashGrid& grid() const { return grid_; }
  HashGrid& grid() { return grid_; }
  const DecoderSpec& decoder_spec() const { return decoder_; }
  const EncodingConfig& config() const { return grid_.config(); }
  int dim() const { return grid_.config().dim; }
  int outputs() const { return decoder_.outputs; }

  std::span<double> decoder_params() { return weights_; }
  std::span<const double> decoder_params() const { return weights_; }

  void forward(std::span<const double> x, std::span<double> out) const;
  /// First output channel at x.
  double value(std::span<const double> x) const;

  /// Forward pass at x, then accumulates d(loss)/d(params) given d(loss)/d(out)
  /// computed by `loss_grad(out, dout)`. Returns nothing; grads are summed.
  template <typename LossGrad>
  void accumulate(std::span<const double> x, LossGrad&& loss_grad, Gradients& grads) const;

  Gradients make_gradients() const;

 private:
  struct Layer {
    int in = 0;
    int out = 0;
    std::size_t offset = 0;
  };
  struct Workspace;

  void forward_cached(std::span<const double> x, Workspace& ws) const;
  void backward_cached(Workspace& ws, std::span<const double> dout, Gradients& grads) const;
  Workspace& workspace() const;

  HashGrid grid_;
  DecoderSpec decoder_;
  std::vector<Layer> layers_;
  std::vector<double> weights_;
};

struct FieldModel::Workspace {
  std::vector<double> enc;
  std::vector<std::vector<double>> act;  // act[k] is the input to layer k; act.back() is the output
  std::vector<std::vector<double>> grad;
  std::vector<std::size_t> rows;         // flat table offsets per (level, corner)
  std::vector<double> corner_w;
  std::vector<double> dout;
};

template <typename LossGrad>
void FieldModel::accumulate(std::span<const double> x, LossGrad&& loss_grad, Gradients& grads) const {
  Workspace& ws = workspace();
  forward_cached(x, ws);
  ws.dout.assign(decoder_.outputs, 0.0);
  loss_grad(std::span<const double>(ws.act.back()), std::span<double>(ws.dout));
  backward_cached(ws, ws.dout, grads);
}

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

/// One bias-corrected Adam update over dense arrays.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const OptimizerSpec& spec);

/// Applies OptimizerSpec to a FieldModel. Table state is dense but updates
/// iterate only over entries that have ever received a gradient, which is
/// exact because untouched entries have zero moments.
class Optimizer {
 public:
  explicit Optimizer(const OptimizerSpec& spec);

  /// Applies one update from `grads`, then clears them.
  void step(FieldModel& model, Gradients& grads);
  long steps_taken() const { return t_; }
  const OptimizerSpec& spec() const { return spec_; }

 private:
  void update(double& p, double g, double& m, double& v, double bc1, double bc2) const;

  OptimizerSpec spec_;
  long t_ = 0;
  std::vector<double> dec_m_, dec_v_;
  std::vector<double> tab_m_, tab_v_;
  std::vector<std::uint8_t> active_mask_;
  std::vector<std::size_t> active_;
};

}  // namespace psflab
