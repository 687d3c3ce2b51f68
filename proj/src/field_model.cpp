#include "psflab/field_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace psflab {

void DecoderSpec::validate() const {
  if (depth < 0 || depth > 3) throw std::invalid_argument("decoder depth must be in 0..3");
  if (width < 1) throw std::invalid_argument("decoder width must be >= 1");
  if (outputs < 1) throw std::invalid_argument("decoder outputs must be >= 1");
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "rmsprop") return OptimizerKind::kRmsprop;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

std::string optimizer_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kAdam: return "adam";
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kRmsprop: return "rmsprop";
  }
  return "?";
}

void OptimizerSpec::validate() const {
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in [0, 1)");
  if (!(eps >= 0.0)) throw std::invalid_argument("eps must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
}

void TableGradient::resize(std::size_t n) {
  values_.assign(n, 0.0);
  mask_.assign(n, 0);
  touched_.clear();
}

void TableGradient::clear() {
  for (std::size_t i : touched_) {
    values_[i] = 0.0;
    mask_[i] = 0;
  }
  touched_.clear();
}

void Gradients::clear() {
  table.clear();
  std::fill(decoder.begin(), decoder.end(), 0.0);
}

FieldModel::FieldModel(const EncodingConfig& config, const DecoderSpec& decoder, std::uint64_t seed)
    : grid_([&] {
        EncodingConfig c = config;
        c.seed = seed;
        return c;
      }()),
      decoder_(decoder) {
  decoder_.validate();
  int in = grid_.config().encoded_width();
  std::size_t offset = 0;
  for (int k = 0; k <= decoder_.depth; ++k) {
    const int out = (k == decoder_.depth) ? decoder_.outputs : decoder_.width;
    layers_.push_back({in, out, offset});
    offset += static_cast<std::size_t>(in) * out;
    in = out;
  }
  weights_.resize(offset);
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
  for (const Layer& layer : layers_) {
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / layer.in));
    for (std::size_t i = 0; i < static_cast<std::size_t>(layer.in) * layer.out; ++i)
      weights_[layer.offset + i] = he(rng);
  }
}

FieldModel::Workspace& FieldModel::workspace() const {
  thread_local Workspace ws;
  return ws;
}

void FieldModel::forward_cached(std::span<const double> x, Workspace& ws) const {
  const EncodingConfig& c = grid_.config();
  const int nf = c.features;
  const int corners = 1 << c.dim;
  ws.act.resize(layers_.size() + 1);
  ws.grad.resize(layers_.size() + 1);
  ws.rows.resize(static_cast<std::size_t>(c.levels) * corners);
  ws.corner_w.resize(ws.rows.size());
  auto& enc = ws.act[0];
  enc.assign(c.encoded_width(), 0.0);
  const auto tables = grid_.tables();
  std::size_t slot = 0;
  grid_.for_each_corner(x, [&](int l, std::uint32_t row, double w) {
    const std::size_t base = grid_.flat_index(l, row, 0);
    ws.rows[slot] = base;
    ws.corner_w[slot] = w;
    ++slot;
    for (int f = 0; f < nf; ++f) enc[l * nf + f] += w * tables[base + f];
  });
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Layer& layer = layers_[k];
    const auto& in = ws.act[k];
    auto& out = ws.act[k + 1];
    out.assign(layer.out, 0.0);
    const double* w = weights_.data() + layer.offset;
    for (int o = 0; o < layer.out; ++o) {
      double acc = 0.0;
      const double* row = w + static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) acc += row[i] * in[i];
      out[o] = (k + 1 < layers_.size()) ? std::max(acc, 0.0) : acc;
    }
  }
}

void FieldModel::backward_cached(Workspace& ws, std::span<const double> dout, Gradients& grads) const {
  const EncodingConfig& c = grid_.config();
  ws.grad.back().assign(dout.begin(), dout.end());
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const Layer& layer = layers_[k];
    auto& dz = ws.grad[k + 1];
    if (k + 1 < layers_.size()) {
      // ReLU: act[k + 1] holds max(z, 0).
      for (int o = 0; o < layer.out; ++o)
        if (ws.act[k + 1][o] <= 0.0) dz[o] = 0.0;
    }
    const auto& in = ws.act[k];
    auto& din = ws.grad[k];
    din.assign(layer.in, 0.0);
    const double* w = weights_.data() + layer.offset;
    double* gw = grads.decoder.data() + layer.offset;
    for (int o = 0; o < layer.out; ++o) {
      const double g = dz[o];
      if (g == 0.0) continue;
      const std::size_t r = static_cast<std::size_t>(o) * layer.in;
      for (int i = 0; i < layer.in; ++i) {
        gw[r + i] += g * in[i];
        din[i] += g * w[r + i];
      }
    }
  }
  const auto& denc = ws.grad[0];
  const int nf = c.features;
  const int corners = 1 << c.dim;
  for (std::size_t s = 0; s < ws.rows.size(); ++s) {
    const int l = static_cast<int>(s) / corners;
    const double w = ws.corner_w[s];
    if (w == 0.0) continue;
    for (int f = 0; f < nf; ++f) grads.table.add(ws.rows[s] + f, w * denc[l * nf + f]);
  }
}

void FieldModel::forward(std::span<const double> x, std::span<double> out) const {
  Workspace& ws = workspace();
  forward_cached(x, ws);
  std::copy(ws.act.back().begin(), ws.act.back().end(), out.begin());
}

double FieldModel::value(std::span<const double> x) const {
  Workspace& ws = workspace();
  forward_cached(x, ws);
  return ws.act.back()[0];
}

Gradients FieldModel::make_gradients() const {
  Gradients g;
  g.table.resize(grid_.tables().size());
  g.decoder.assign(weights_.size(), 0.0);
  return g;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const OptimizerSpec& spec) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: shape mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(spec.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(spec.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = spec.beta1 * state.m[i] + (1.0 - spec.beta1) * g;
    state.v[i] = spec.beta2 * state.v[i] + (1.0 - spec.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= spec.lr * mhat / (std::sqrt(vhat) + spec.eps);
  }
}

Optimizer::Optimizer(const OptimizerSpec& spec) : spec_(spec) { spec_.validate(); }

void Optimizer::update(double& p, double g, double& m, double& v, double bc1, double bc2) const {
  switch (spec_.kind) {
    case OptimizerKind::kAdam: {
      m = spec_.beta1 * m + (1.0 - spec_.beta1) * g;
      v = spec_.beta2 * v + (1.0 - spec_.beta2) * g * g;
      p -= spec_.lr * (m / bc1) / (std::sqrt(v / bc2) + spec_.eps);
      break;
    }
    case OptimizerKind::kSgd:
      m = spec_.momentum * m + g;
      p -= spec_.lr * m;
      break;
    case OptimizerKind::kRmsprop: {
      v = spec_.beta2 * v + (1.0 - spec_.beta2) * g * g;
      const double step = g / (std::sqrt(v) + spec_.eps);
      if (spec_.momentum > 0.0) {
        m = spec_.momentum * m + step;
        p -= spec_.lr * m;
      } else {
        p -= spec_.lr * step;
      }
      break;
    }
  }
}

void Optimizer::step(FieldModel& model, Gradients& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));

  auto dec = model.decoder_params();
  if (dec_m_.size() != dec.size()) {
    dec_m_.assign(dec.size(), 0.0);
    dec_v_.assign(dec.size(), 0.0);
  }
  for (std::size_t i = 0; i < dec.size(); ++i) update(dec[i], grads.decoder[i], dec_m_[i], dec_v_[i], bc1, bc2);

  auto tables = model.grid().tables();
  if (tab_m_.size() != tables.size()) {
    tab_m_.assign(tables.size(), 0.0);
    tab_v_.assign(tables.size(), 0.0);
    active_mask_.assign(tables.size(), 0);
    active_.clear();
  }
  for (std::size_t i : grads.table.touched()) {
    if (!active_mask_[i]) {
      active_mask_[i] = 1;
      active_.push_back(i);
    }
  }
  if (active_.size() * 4 > tables.size() && spec_.kind == OptimizerKind::kAdam) {
    // Mostly active: sweep everything. Entries that never saw a gradient have
    // m = v = 0 and therefore take a zero step, so this matches the sparse path.
    double* p = tables.data();
    double* m = tab_m_.data();
    double* v = tab_v_.data();
    const double* g = grads.table.data();
    const double b1 = spec_.beta1, b2 = spec_.beta2, eps = spec_.eps;
    const double a = spec_.lr / bc1, inv_bc2 = 1.0 / bc2;
    for (std::size_t i = 0; i < tables.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      p[i] -= a * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  } else {
    for (std::size_t i : active_) update(tables[i], grads.table[i], tab_m_[i], tab_v_[i], bc1, bc2);
  }
  grads.clear();
}

}  // namespace psflab
