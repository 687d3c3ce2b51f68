#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "psflab/field_model.hpp"
#include "psflab/training.hpp"

using namespace psflab;

namespace {

EncodingConfig point_config(int levels = 8, double growth = 1.5, std::uint32_t t = 1u << 16) {
  EncodingConfig c;
  c.dim = 2;
  c.levels = levels;
  c.n_min = 16.0;
  c.growth = growth;
  c.table_size = t;
  c.features = 2;
  return c;
}

OptimizerSpec adam(double lr, int steps) {
  OptimizerSpec o;
  o.lr = lr;
  o.steps = steps;
  return o;
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Sum over points and outputs of (f - target)^2.
double loss_of(const FieldModel& m, const std::vector<std::vector<double>>& xs, double target) {
  std::vector<double> out(m.outputs());
  double s = 0.0;
  for (const auto& x : xs) {
    m.forward(x, out);
    for (double o : out) s += (o - target) * (o - target);
  }
  return s;
}

void gradient_check(const DecoderSpec& dec) {
  EncodingConfig c = point_config(4, 2.0, 1u << 10);
  FieldModel m(c, dec, 11);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.05, 0.95);
  for (double& v : m.grid().tables()) v = u(rng);
  const std::vector<std::vector<double>> xs{{pos(rng), pos(rng)}, {pos(rng), pos(rng)}, {pos(rng), pos(rng)}};
  const double target = 0.3;

  Gradients g = m.make_gradients();
  for (const auto& x : xs)
    m.accumulate(
        x,
        [&](std::span<const double> out, std::span<double> dout) {
          for (std::size_t k = 0; k < out.size(); ++k) dout[k] = 2.0 * (out[k] - target);
        },
        g);

  const double h = 1e-4;
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); };
  auto numeric = [&](double& p) {
    const double keep = p;
    p = keep + h;
    const double up = loss_of(m, xs, target);
    p = keep - h;
    const double down = loss_of(m, xs, target);
    p = keep;
    return (up - down) / (2.0 * h);
  };

  // Table entries that the points touch, plus untouched ones.
  std::vector<std::size_t> entries;
  for (const auto& x : xs)
    for (const auto& e : m.grid().encode_support(x))
      entries.push_back(m.grid().flat_index(e.level, e.index, e.feature));
  std::shuffle(entries.begin(), entries.end(), rng);
  entries.resize(16);
  std::uniform_int_distribution<std::size_t> any(0, m.grid().tables().size() - 1);
  for (int i = 0; i < 4; ++i) entries.push_back(any(rng));

  for (std::size_t idx : entries) {
    const double n = numeric(m.grid().tables()[idx]);
    CHECK(rel(g.table[idx], n) <= 1e-3);
  }
  for (std::size_t k = 0; k < m.decoder_params().size(); ++k) {
    const double n = numeric(m.decoder_params()[k]);
    CHECK(rel(g.decoder[k], n) <= 1e-3);
  }
}

}  // namespace

TEST_CASE("analytic gradients match central differences") {
  SUBCASE("linear decoder") { gradient_check(DecoderSpec::linear()); }
  SUBCASE("relu mlp") { gradient_check(DecoderSpec::mlp(2, 16)); }
  SUBCASE("three outputs") { gradient_check(DecoderSpec::mlp(1, 8, 3)); }
}

TEST_CASE("initialisation is deterministic and near zero") {
  const auto c = point_config();
  FieldModel a(c, DecoderSpec::mlp(2, 32), 5), b(c, DecoderSpec::mlp(2, 32), 5), other(c, DecoderSpec::mlp(2, 32), 6);
  CHECK(same_bits(a.grid().tables(), b.grid().tables()));
  CHECK(same_bits(a.decoder_params(), b.decoder_params()));
  CHECK_FALSE(same_bits(a.decoder_params(), other.decoder_params()));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double x[2] = {u(rng), u(rng)};
    CHECK(std::abs(a.value(x)) <= 1e-2);
  }

  FieldModel z(c, DecoderSpec::linear(), 5);
  for (double& v : z.grid().tables()) v = 0.0;
  const double x[2] = {0.3, 0.6};
  CHECK(z.value(x) == 0.0);
}

TEST_CASE("decoder and optimizer spec validation") {
  CHECK_THROWS(DecoderSpec::mlp(4, 8).validate());
  CHECK_THROWS(DecoderSpec::mlp(1, 0).validate());
  OptimizerSpec o;
  o.beta1 = 1.0;
  CHECK_THROWS(o.validate());
  o = {};
  o.lr = -1.0;
  CHECK_THROWS(o.validate());
  CHECK(parse_optimizer("rmsprop") == OptimizerKind::kRmsprop);
  CHECK(optimizer_name(parse_optimizer("sgd")) == "sgd");
  CHECK_THROWS(parse_optimizer("lbfgs"));
}

TEST_CASE("adam_step follows the scalar reference") {
  OptimizerSpec s;
  s.lr = 0.05;
  oracle::ScalarAdam ref{s.lr, s.beta1, s.beta2, s.eps};
  double p = 0.7, q = 0.7;
  AdamState st;
  for (int t = 0; t < 10; ++t) {
    const double g = 2.0 * (p - 3.0) + std::sin(t);
    double gp[1] = {g};
    adam_step(std::span<double>(&p, 1), gp, st, s);
    q = ref.step(q, 2.0 * (q - 3.0) + std::sin(t));
    CHECK(std::abs(p - q) <= 1e-12);
  }

  // Zero gradients leave params alone while the moments decay.
  double z = 1.5;
  AdamState zs;
  zs.m = {0.4};
  zs.v = {0.2};
  const double zero[1] = {0.0};
  adam_step(std::span<double>(&z, 1), zero, zs, s);
  CHECK(zs.m[0] == doctest::Approx(0.4 * s.beta1).scale(0));
  CHECK(zs.v[0] == doctest::Approx(0.2 * s.beta2).scale(0));

  // A constant gradient settles to steps of size lr.
  double c = 0.0, prev = 0.0;
  AdamState cs;
  const double g[1] = {0.37};
  for (int t = 0; t < 500; ++t) {
    prev = c;
    adam_step(std::span<double>(&c, 1), g, cs, s);
  }
  CHECK(std::abs(prev - c) == doctest::Approx(s.lr).epsilon(1e-6).scale(0));
  CHECK_THROWS(adam_step(std::span<double>(&c, 1), std::span<const double>(), cs, s));
}

TEST_CASE("model optimizer equals dense adam") {
  // Exercises both the sparse and the dense table update paths.
  for (std::uint32_t t : {1u << 16, 1u << 6}) {
    const auto c = point_config(4, 2.0, t);
    FieldModel a(c, DecoderSpec::mlp(1, 8), 2), b(c, DecoderSpec::mlp(1, 8), 2);
    OptimizerSpec s = adam(1e-2, 0);
    Optimizer opt(s);
    AdamState tab, dec;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int step = 0; step < 5; ++step) {
      Gradients ga = a.make_gradients(), gb = b.make_gradients();
      for (int k = 0; k < 4; ++k) {
        const double x[2] = {u(rng), u(rng)};
        auto lg = [](std::span<const double> out, std::span<double> d) { d[0] = 2.0 * (out[0] - 1.0); };
        a.accumulate(x, lg, ga);
        b.accumulate(x, lg, gb);
      }
      std::vector<double> dense(gb.table.size());
      for (std::size_t i = 0; i < dense.size(); ++i) dense[i] = gb.table[i];
      opt.step(a, ga);
      adam_step(b.grid().tables(), dense, tab, s);
      adam_step(b.decoder_params(), gb.decoder, dec, s);
    }
    for (std::size_t i = 0; i < a.grid().tables().size(); ++i)
      REQUIRE(a.grid().tables()[i] == doctest::Approx(b.grid().tables()[i]).epsilon(1e-12).scale(0));
    for (std::size_t i = 0; i < a.decoder_params().size(); ++i)
      CHECK(a.decoder_params()[i] == doctest::Approx(b.decoder_params()[i]).epsilon(1e-12).scale(0));
  }
}

TEST_CASE("single point training converges") {
  FieldModel m(point_config(10, 1.5), DecoderSpec::linear(), 0);
  const std::vector<Constraint> cs{{{0.5, 0.5}, 1.0}};
  const auto r = train_points(m, cs, adam(1e-2, 2000));
  CHECK(std::abs(m.value(cs[0].point) - 1.0) <= 1e-2);
  CHECK(r.loss_trace.size() == 2001);
  CHECK(r.max_residual == doctest::Approx(std::abs(m.value(cs[0].point) - 1.0)).scale(0));
  CHECK(r.final_loss < r.loss_trace.front());
}

TEST_CASE("zero learning rate is a no-op") {
  for (auto kind : {OptimizerKind::kAdam, OptimizerKind::kSgd, OptimizerKind::kRmsprop}) {
    FieldModel m(point_config(), DecoderSpec::mlp(1, 8), 3);
    const std::vector<double> tables(m.grid().tables().begin(), m.grid().tables().end());
    const std::vector<double> dec(m.decoder_params().begin(), m.decoder_params().end());
    OptimizerSpec o = adam(0.0, 20);
    o.kind = kind;
    train_points(m, std::vector<Constraint>{{{0.4, 0.6}, 1.0}}, o);
    CHECK(same_bits(tables, m.grid().tables()));
    CHECK(same_bits(dec, m.decoder_params()));
  }
}

TEST_CASE("point training is deterministic") {
  const std::vector<Constraint> cs{{{0.45, 0.52}, 1.0}};
  FieldModel a(point_config(), DecoderSpec::linear(), 9), b(point_config(), DecoderSpec::linear(), 9);
  const auto ra = train_points(a, cs, adam(1e-2, 200));
  const auto rb = train_points(b, cs, adam(1e-2, 200));
  CHECK(same_bits(ra.loss_trace, rb.loss_trace));
  CHECK(same_bits(a.grid().tables(), b.grid().tables()));
}

TEST_CASE("point training input validation and divergence") {
  FieldModel m(point_config(), DecoderSpec::linear(), 0);
  CHECK_THROWS_AS(train_points(m, std::vector<Constraint>{}, adam(1e-2, 10)), std::invalid_argument);
  CHECK_THROWS_AS(train_points(m, std::vector<Constraint>{{{1.2, 0.5}, 1.0}}, adam(1e-2, 10)),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_points(m, std::vector<Constraint>{{{0.5}, 1.0}}, adam(1e-2, 10)), std::invalid_argument);
  OptimizerSpec wild;
  wild.kind = OptimizerKind::kSgd;
  wild.lr = 1e4;
  wild.steps = 50;
  CHECK_THROWS_AS(train_points(m, std::vector<Constraint>{{{0.5, 0.5}, 1.0}}, wild), TrainingDiverged);
}

TEST_CASE("colliding rows move in proportion to their summed weights") {
  EncodingConfig c = point_config(1, 1.5, 2);
  c.features = 1;
  FieldModel m(c, DecoderSpec::linear(), 4);
  const std::vector<double> x0{0.3, 0.45};
  double w[2] = {0.0, 0.0};
  for (const auto& e : m.grid().encode_support(x0)) w[e.index] += e.weight;
  REQUIRE(w[0] > 0.0);
  REQUIRE(w[1] > 0.0);
  const double t0[2] = {m.grid().tables()[0], m.grid().tables()[1]};
  OptimizerSpec sgd;
  sgd.kind = OptimizerKind::kSgd;
  sgd.lr = 0.05;
  sgd.steps = 400;
  train_points(m, std::vector<Constraint>{{x0, 1.0}}, sgd);
  const double d0 = m.grid().tables()[0] - t0[0], d1 = m.grid().tables()[1] - t0[1];
  CHECK(d0 / d1 == doctest::Approx(w[0] / w[1]).epsilon(0.05).scale(0));
  CHECK(std::abs(m.value(x0) - 1.0) < 1e-3);
}

TEST_CASE("dipole constraints keep their signs") {
  FieldModel m(point_config(10, 1.5), DecoderSpec::linear(), 2);
  const std::vector<Constraint> cs{{{0.49, 0.5}, 1.0}, {{0.51, 0.5}, -1.0}};
  train_points(m, cs, adam(1e-2, 1000));
  CHECK(m.value(cs[0].point) > 0.0);
  CHECK(m.value(cs[1].point) < 0.0);
}

TEST_CASE("psnr sentinel and formula") {
  CHECK(std::isinf(psnr_from_mse(0.0)));
  CHECK(psnr_from_mse(1e-4) == doctest::Approx(40.0).scale(0));
}

TEST_CASE("gray image is learned quickly") {
  // Image desk defaults: L=16 at the one-pixel growth for 256 px, T=2^14, one hidden layer of 32.
  EncodingConfig c = point_config(16, 1.439, 1u << 14);
  FieldModel m(c, DecoderSpec::mlp(1, 32, 3), 0);
  const Image gray = constant_image(64, 0.5);
  ImageTrainOptions io;
  io.batch = 2048;
  io.checkpoint_every = 100;
  const auto r = train_image(m, gray, adam(1e-3, 200), io);
  CHECK(r.trace.front().step == 0);
  CHECK(r.trace.back().step == 200);
  CHECK(r.final_psnr() >= 40.0);
  CHECK(r.final_psnr() == doctest::Approx(psnr_from_mse(image_mse(m, gray))).scale(0));
}

TEST_CASE("image training rejects bad inputs") {
  FieldModel m(point_config(), DecoderSpec::mlp(1, 8, 3), 0);
  ImageTrainOptions io;
  CHECK_THROWS(train_image(m, Image(8, 16, 3), adam(1e-3, 1), io));
  CHECK_THROWS(train_image(m, constant_image(8, 0.5, 1), adam(1e-3, 1), io));
  io.batch = 0;
  CHECK_THROWS(train_image(m, constant_image(8, 0.5, 3), adam(1e-3, 1), io));
}

TEST_CASE("image regression improves on a synthetic target" * doctest::timeout(300)) {
  EncodingConfig c = point_config(16, 1.439, 1u << 14);
  FieldModel m(c, DecoderSpec::mlp(1, 32, 3), 0);
  const Image img = synthetic_image("chirp", 256);
  ImageTrainOptions io;
  io.batch = 1024;
  io.checkpoint_every = 500;
  const auto r = train_image(m, img, adam(1e-3, 2000), io);
  CHECK(r.final_psnr() >= r.trace.front().psnr + 10.0);
}

TEST_CASE("synthetic images") {
  for (const char* name : {"stripes", "chirp", "checker", "gray"}) {
    const Image img = synthetic_image(name, 32);
    CHECK(img.square());
    CHECK(img.channels == 3);
    for (double v : img.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK_THROWS(synthetic_image("mandrill", 32));
  const Image crop = center_crop_square(Image(10, 6, 1));
  CHECK(crop.height == 6);
  CHECK(crop.width == 6);
}
