#include "psflab/lab.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <unistd.h>

#include "psflab/parallel.hpp"
#include "psflab/psf_metrology.hpp"
#include "psflab/psf_planner.hpp"
#include "psflab/stats.hpp"
#include "psflab/training.hpp"

namespace psflab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::set<std::string> kCommands = {"psf", "two-point", "collision", "rotate-sweep", "image", "plan"};
const std::set<std::string> kShared = {"out", "seeds", "parallel", "encoding", "decoder", "optimizer"};

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError(fmt::format("unknown key '{}' in {}", key, where));
}

template <typename T>
T get(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("bad value for '{}': {}", key, e.what()));
  }
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string num(double v) { return fmt::format("{:.9g}", v); }

struct Cell {
  int levels = 0;
  double growth = 0.0;
  std::string id() const { return fmt::format("L{}_b{:g}", levels, growth); }
};

std::vector<Cell> parse_cells(const json& block, const std::string& key, std::vector<Cell> fallback) {
  if (!block.contains(key)) return fallback;
  const json& arr = block.at(key);
  if (!arr.is_array() || arr.empty()) throw ConfigError(key + " must be a non-empty array");
  std::vector<Cell> cells;
  for (const json& c : arr) {
    Cell cell;
    if (c.is_array() && c.size() == 2 && c[0].is_number_integer() && c[1].is_number()) {
      cell = {c[0].get<int>(), c[1].get<double>()};
    } else if (c.is_object()) {
      check_keys(c, key + " entry", {"levels", "growth"});
      cell = {get<int>(c, "levels", 0), get<double>(c, "growth", 0.0)};
    } else {
      throw ConfigError(key + " entries must be [levels, growth] or {levels, growth}");
    }
    if (cell.levels < 1 || !(cell.growth >= 1.0)) throw ConfigError(fmt::format("invalid cell in {}", key));
    cells.push_back(cell);
  }
  return cells;
}

struct Context {
  std::string command;
  json root;
  json block;
  fs::path out;
  std::vector<std::uint64_t> seeds;
  int parallel = 1;

  std::mutex mu;
  json runs = json::array();
  std::vector<std::string> outputs;
  std::vector<std::string> failures;
  json flags = json::array();
  json summary = json::object();

  void write(const std::string& rel, const std::string& content) {
    write_file_atomic(out / rel, content);
    std::lock_guard lock(mu);
    outputs.push_back(rel);
  }
  void record(const std::string& id, std::uint64_t seed, double seconds, const std::string& error) {
    json r{{"id", id}, {"seed", seed}, {"ok", error.empty()}, {"wall_seconds", seconds}};
    if (!error.empty()) r["error"] = error;
    std::lock_guard lock(mu);
    runs.push_back(r);
    if (!error.empty()) failures.push_back(fmt::format("{} seed {}: {}", id, seed, error));
  }
  void flag(const json& f) {
    std::lock_guard lock(mu);
    flags.push_back(f);
  }
  void log(const std::string& line) {
    std::lock_guard lock(mu);
    fmt::print(stderr, "[{}] {}\n", command, line);
  }

  json section(const std::string& key) const {
    json merged = root.value(key, json::object());
    if (!merged.is_object()) throw ConfigError(key + " must be a JSON object");
    if (block.contains(key)) merged.merge_patch(block.at(key));
    return merged;
  }
  EncodingConfig encoding(EncodingConfig base) const { return encoding_from_json(section("encoding"), base); }
  DecoderSpec decoder(DecoderSpec base) const { return decoder_from_json(section("decoder"), base); }
  OptimizerSpec optimizer(OptimizerSpec base) const { return optimizer_from_json(section("optimizer"), base); }
};

template <typename Fn>
std::string to_csv(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

PointPsfOptions point_options(const Context& ctx) {
  PointPsfOptions p;
  p.jitter = get<double>(ctx.block, "jitter", p.jitter);
  p.samples = get<int>(ctx.block, "samples", p.samples);
  p.amplitude = get<double>(ctx.block, "amplitude", p.amplitude);
  p.measure.alphas = get<std::vector<double>>(ctx.block, "alphas", p.measure.alphas);
  p.measure.n_angles = get<int>(ctx.block, "n_angles", p.measure.n_angles);
  if (std::find(p.measure.alphas.begin(), p.measure.alphas.end(), 0.5) == p.measure.alphas.end())
    p.measure.alphas.push_back(0.5);
  return p;
}

OptimizerSpec point_optimizer(const Context& ctx) {
  OptimizerSpec o;
  o.lr = 1e-2;
  o.steps = 1000;
  return ctx.optimizer(o);
}

EncodingConfig point_encoding(const Context& ctx) {
  EncodingConfig e;
  e.dim = 2;
  e.levels = 10;
  e.growth = 1.5;
  e.table_size = 1u << 20;
  return ctx.encoding(e);
}

const std::vector<Cell> kDefaultCells = {{8, 1.4}, {10, 1.5}, {12, 1.6}};

int cmd_psf(Context& ctx) {
  check_keys(ctx.block, "psf", {"out", "seeds", "parallel", "encoding", "decoder", "optimizer", "cells", "jitter",
                                "samples", "amplitude", "alphas", "n_angles", "write_maps"});
  const EncodingConfig base = point_encoding(ctx);
  const DecoderSpec dec = ctx.decoder(DecoderSpec::linear());
  const OptimizerSpec opt = point_optimizer(ctx);
  const auto cells = parse_cells(ctx.block, "cells", kDefaultCells);
  const PointPsfOptions popt = point_options(ctx);
  const bool write_maps = get<bool>(ctx.block, "write_maps", true);

  struct Slot {
    bool ok = false;
    PSFMetrics metrics;
    std::vector<double> x0;
  };
  const std::size_t ns = ctx.seeds.size();
  std::vector<Slot> slots(cells.size() * ns);
  parallel_for(slots.size(), ctx.parallel, [&](std::size_t i) {
    const Cell& cell = cells[i / ns];
    const std::uint64_t seed = ctx.seeds[i % ns];
    EncodingConfig cfg = base;
    cfg.levels = cell.levels;
    cfg.growth = cell.growth;
    const double t0 = now_seconds();
    std::string error;
    try {
      cfg.validate();
      const PointPsfRun run = point_psf_experiment(cfg, dec, opt, seed, popt);
      slots[i] = {true, run.metrics, run.x0};
      const std::string dir = fmt::format("cells/{}/s{}/", cell.id(), seed);
      if (write_maps && run.map) ctx.write(dir + "psf_map.csv", to_csv([&](std::ostream& os) { write_psf_map_csv(os, *run.map); }));
      if (!run.metrics.fwhm_by_angle.empty())
        ctx.write(dir + "fwhm_by_angle.csv",
                  to_csv([&](std::ostream& os) { write_fwhm_by_angle_csv(os, run.metrics.fwhm_by_angle); }));
      ctx.log(fmt::format("{} seed {}: fwhm_axis {:.5g} beta_emp {:.3f} anisotropy {:.3f}", cell.id(), seed,
                          run.metrics.fwhm_axis, run.metrics.beta_emp, run.metrics.anisotropy_at(0.5)));
    } catch (const std::exception& e) {
      error = e.what();
    }
    ctx.record(cell.id(), seed, now_seconds() - t0, error);
  });

  std::ostringstream summary, per_run;
  summary << "L,b,N_avg,fwhm_axis,fwhm_diag,beta_emp_mean,beta_emp_std\n";
  per_run << "L,b,seed,fwhm_axis,fwhm_diag,beta_emp,anisotropy,snr_db\n";
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> axis, diag, beta;
    for (std::size_t s = 0; s < ns; ++s) {
      const Slot& slot = slots[c * ns + s];
      if (!slot.ok) continue;
      axis.push_back(slot.metrics.fwhm_axis);
      diag.push_back(slot.metrics.fwhm_diag);
      beta.push_back(slot.metrics.beta_emp);
      fmt::print(per_run, "{},{:g},{},{},{},{},{},{}\n", cells[c].levels, cells[c].growth, ctx.seeds[s],
                 num(slot.metrics.fwhm_axis), num(slot.metrics.fwhm_diag), num(slot.metrics.beta_emp),
                 num(slot.metrics.anisotropy_at(0.5)), num(slot.metrics.snr_db));
    }
    if (beta.empty()) continue;
    const double navg = LevelSchedule{cells[c].levels, base.n_min, cells[c].growth}.n_avg();
    fmt::print(summary, "{},{:g},{},{},{},{},{}\n", cells[c].levels, cells[c].growth, num(navg), num(mean(axis)),
               num(mean(diag)), num(mean(beta)), num(stddev(beta)));
  }
  ctx.write("beta_summary.csv", summary.str());
  ctx.write("beta_runs.csv", per_run.str());
  return 0;
}

int cmd_two_point(Context& ctx) {
  check_keys(ctx.block, "two-point", {"out", "seeds", "parallel", "encoding", "decoder", "optimizer", "cells",
                                      "f_values", "threshold", "axis", "dipole_f", "jitter"});
  const EncodingConfig base = point_encoding(ctx);
  const DecoderSpec dec = ctx.decoder(DecoderSpec::linear());
  const OptimizerSpec opt = point_optimizer(ctx);
  const auto cells = parse_cells(ctx.block, "cells", kDefaultCells);
  const auto f_values = get<std::vector<double>>(
      ctx.block, "f_values", {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.2, 1.5, 2.0, 3.0, 4.0});
  if (!std::is_sorted(f_values.begin(), f_values.end())) throw ConfigError("f_values must be ascending");
  TwoPointOptions tp;
  tp.threshold = get<double>(ctx.block, "threshold", tp.threshold);
  tp.axis = get<int>(ctx.block, "axis", tp.axis);
  tp.jitter = get<double>(ctx.block, "jitter", tp.jitter);
  tp.relative = true;
  const double dipole_f = get<double>(ctx.block, "dipole_f", 0.3);

  struct Slot {
    bool ok = false;
    double fwhm = 0.0;
    std::optional<double> d_crit;
    double cosine = std::nan("");
  };
  const std::size_t ns = ctx.seeds.size();
  std::vector<Slot> slots(cells.size() * ns);
  parallel_for(slots.size(), ctx.parallel, [&](std::size_t i) {
    const Cell& cell = cells[i / ns];
    const std::uint64_t seed = ctx.seeds[i % ns];
    EncodingConfig cfg = base;
    cfg.levels = cell.levels;
    cfg.growth = cell.growth;
    const double t0 = now_seconds();
    std::string error;
    try {
      cfg.validate();
      TwoPointOptions o = tp;
      o.seed = seed;
      const TwoPointResult r = two_point_experiment(cfg, dec, opt, f_values, o);
      Slot slot{true, r.fwhm, r.d_crit, std::nan("")};
      if (dipole_f > 0.0) {
        DipoleOptions dopt;
        dopt.axis = tp.axis;
        dopt.seed = seed;
        dopt.jitter = tp.jitter;
        slot.cosine = dipole_experiment(cfg, dec, opt, dipole_f * r.fwhm, dopt).cosine;
      }
      slots[i] = slot;
      ctx.write(fmt::format("cells/{}/s{}/two_point.csv", cell.id(), seed),
                to_csv([&](std::ostream& os) { write_two_point_csv(os, r); }));
      for (const auto& e : r.entries)
        if (!e.ok) ctx.flag({{"id", cell.id()}, {"seed", seed}, {"missing_d", e.d}, {"error", e.error}});
      ctx.log(fmt::format("{} seed {}: fwhm {:.5g} d_crit {} dipole cosine {:.3f}", cell.id(), seed, r.fwhm,
                          r.d_crit ? fmt::format("{:.5g}", *r.d_crit) : "none", slot.cosine));
    } catch (const std::exception& e) {
      error = e.what();
    }
    ctx.record(cell.id(), seed, now_seconds() - t0, error);
  });

  std::ostringstream os;
  os << "L,b,seed,fwhm,d_crit,dipole_cosine\n";
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const Slot& s = slots[i];
    if (!s.ok) continue;
    const Cell& cell = cells[i / ns];
    fmt::print(os, "{},{:g},{},{},{},{}\n", cell.levels, cell.growth, ctx.seeds[i % ns], num(s.fwhm),
               s.d_crit ? num(*s.d_crit) : "nan", num(s.cosine));
    if (s.d_crit) {
      xs.push_back(s.fwhm);
      ys.push_back(*s.d_crit);
    }
  }
  ctx.write("dcrit_vs_fwhm.csv", os.str());
  if (xs.size() >= 2) {
    try {
      const LineFit fit = fit_line(xs, ys);
      ctx.summary["dcrit_fit"] = {{"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}};
    } catch (const std::invalid_argument&) {
    }
  }
  ctx.summary["threshold"] = tp.threshold;
  return 0;
}

int cmd_collision(Context& ctx) {
  check_keys(ctx.block, "collision", {"out", "seeds", "parallel", "encoding", "decoder", "optimizer", "series",
                                      "table_sizes_log2", "jitter", "samples"});
  const EncodingConfig base = point_encoding(ctx);
  const DecoderSpec dec = ctx.decoder(DecoderSpec::linear());
  const OptimizerSpec opt = point_optimizer(ctx);
  const auto series = parse_cells(ctx.block, "series", {{6, 1.5}, {9, 1.5}, {12, 1.5}});
  const auto logs = get<std::vector<int>>(ctx.block, "table_sizes_log2", {8, 10, 12, 14, 16, 18});
  std::vector<std::uint32_t> sizes;
  for (int l : logs) {
    if (l < 0 || l > 31) throw ConfigError("table_sizes_log2 entries must lie in 0..31");
    sizes.push_back(1u << l);
  }
  PointPsfOptions popt;
  popt.jitter = get<double>(ctx.block, "jitter", popt.jitter);
  popt.samples = get<int>(ctx.block, "samples", popt.samples);

  const std::size_t ns = ctx.seeds.size();
  std::vector<std::optional<double>> rho(series.size() * ns);
  parallel_for(rho.size(), ctx.parallel, [&](std::size_t i) {
    const Cell& cell = series[i / ns];
    const std::uint64_t seed = ctx.seeds[i % ns];
    EncodingConfig cfg = base;
    cfg.levels = cell.levels;
    cfg.growth = cell.growth;
    const double t0 = now_seconds();
    std::string error;
    try {
      cfg.validate();
      const CollisionSweep sweep = collision_sweep(cfg, sizes, dec, opt, seed, popt);
      ctx.write(fmt::format("series/{}/s{}/collision_sweep.csv", cell.id(), seed),
                to_csv([&](std::ostream& os) { write_collision_csv(os, sweep); }));
      std::vector<double> cf, snr;
      for (const auto& e : sweep.entries) {
        if (e.colliding_fraction >= 1.0)
          ctx.flag({{"id", cell.id()}, {"seed", seed}, {"T", e.table_size}, {"degenerate", true}});
        if (!e.ok) {
          ctx.flag({{"id", cell.id()}, {"seed", seed}, {"T", e.table_size}, {"error", e.error}});
          continue;
        }
        cf.push_back(e.colliding_fraction);
        snr.push_back(e.snr_db);
      }
      if (cf.size() >= 2) rho[i] = spearman(cf, snr);
      ctx.log(fmt::format("{} seed {}: spearman(collisions, snr) {}", cell.id(), seed,
                          rho[i] ? fmt::format("{:.3f}", *rho[i]) : "n/a"));
    } catch (const std::exception& e) {
      error = e.what();
    }
    ctx.record(cell.id(), seed, now_seconds() - t0, error);
  });
  std::ostringstream os;
  os << "L,b,seed,spearman\n";
  for (std::size_t i = 0; i < rho.size(); ++i)
    fmt::print(os, "{},{:g},{},{}\n", series[i / ns].levels, series[i / ns].growth, ctx.seeds[i % ns],
               rho[i] ? num(*rho[i]) : "nan");
  ctx.write("collision_summary.csv", os.str());
  return 0;
}

int cmd_rotate_sweep(Context& ctx) {
  check_keys(ctx.block, "rotate-sweep", {"out", "seeds", "parallel", "encoding", "decoder", "optimizer", "m_values",
                                         "alphas", "jitter", "samples", "n_angles", "amplitude", "write_maps"});
  const EncodingConfig base = point_encoding(ctx);
  if (base.dim != 2) throw ConfigError("rotate-sweep uses progressive 2D rotations; set encoding.dim = 2");
  const DecoderSpec dec = ctx.decoder(DecoderSpec::linear());
  const OptimizerSpec opt = point_optimizer(ctx);
  const auto ms = get<std::vector<int>>(ctx.block, "m_values", {1, 2, 4, 8, 16});
  PointPsfOptions popt = point_options(ctx);
  if (!ctx.block.contains("alphas")) popt.measure.alphas = {0.25, 0.5, 0.75};
  const bool write_maps = get<bool>(ctx.block, "write_maps", true);
  for (int m : ms)
    if (m < 1) throw ConfigError("m_values must be >= 1");

  const std::size_t ns = ctx.seeds.size();
  std::vector<std::optional<std::vector<double>>> ratios(ms.size() * ns);
  parallel_for(ratios.size(), ctx.parallel, [&](std::size_t i) {
    const int m = ms[i / ns];
    const std::uint64_t seed = ctx.seeds[i % ns];
    EncodingConfig cfg = base;
    cfg.rotation = m == 1 ? RotationStrategy::identity() : RotationStrategy::progressive(m);
    const std::string id = fmt::format("M{}", m);
    const double t0 = now_seconds();
    std::string error;
    try {
      const PointPsfRun run = point_psf_experiment(cfg, dec, opt, seed, popt);
      ratios[i] = run.metrics.anisotropy;
      const std::string dir = fmt::format("maps/{}/s{}/", id, seed);
      if (write_maps && run.map) ctx.write(dir + "psf_map.csv", to_csv([&](std::ostream& os) { write_psf_map_csv(os, *run.map); }));
      ctx.write(dir + "fwhm_by_angle.csv",
                to_csv([&](std::ostream& os) { write_fwhm_by_angle_csv(os, run.metrics.fwhm_by_angle); }));
      ctx.log(fmt::format("M={} seed {}: anisotropy(0.5) {:.4f}", m, seed, run.metrics.anisotropy_at(0.5)));
    } catch (const std::exception& e) {
      error = e.what();
    }
    ctx.record(id, seed, now_seconds() - t0, error);
  });
  std::ostringstream os;
  os << "M,alpha,ratio_mean,ratio_std\n";
  for (std::size_t mi = 0; mi < ms.size(); ++mi)
    for (std::size_t a = 0; a < popt.measure.alphas.size(); ++a) {
      std::vector<double> v;
      for (std::size_t s = 0; s < ns; ++s)
        if (const auto& r = ratios[mi * ns + s]) v.push_back((*r)[a]);
      if (v.empty()) continue;
      fmt::print(os, "{},{:g},{},{}\n", ms[mi], popt.measure.alphas[a], num(mean(v)), num(stddev(v)));
    }
  ctx.write("anisotropy_vs_M.csv", os.str());
  return 0;
}

Image load_target(const std::string& spec, int size) {
  static const std::set<std::string> kSynthetic = {"stripes", "chirp", "checker", "gray"};
  if (kSynthetic.count(spec)) return synthetic_image(spec, size);
  Image img = center_crop_square(load_image(spec));
  if (img.channels == 1 || img.channels == 3) return img;
  throw ConfigError("images must have 1 or 3 channels");
}

int cmd_image(Context& ctx) {
  check_keys(ctx.block, "image", {"out", "seeds", "parallel", "encoding", "decoder", "optimizer", "image", "size",
                                  "beta", "m_values", "b_offsets", "sweep_m_values", "batch", "checkpoint_every"});
  EncodingConfig eb;
  eb.levels = 16;
  eb.table_size = 1u << 14;
  const EncodingConfig base = ctx.encoding(eb);
  if (base.dim != 2) throw ConfigError("image regression needs encoding.dim = 2");
  OptimizerSpec ob;
  ob.lr = 1e-3;
  ob.steps = 1000;
  const OptimizerSpec opt = ctx.optimizer(ob);
  const std::string source = get<std::string>(ctx.block, "image", "stripes");
  const int size = get<int>(ctx.block, "size", 256);
  const Image image = load_target(source, size);
  DecoderSpec dec = ctx.decoder(DecoderSpec::mlp(1, 32));
  dec.outputs = image.channels;
  const double beta = get<double>(ctx.block, "beta", 3.0);
  const auto ms = get<std::vector<int>>(ctx.block, "m_values", {1, 2, 4, 8});
  const auto offsets = get<std::vector<double>>(ctx.block, "b_offsets", {-0.2, -0.1, 0.0, 0.1, 0.2});
  const auto sweep_ms = get<std::vector<int>>(ctx.block, "sweep_m_values", {1});
  ImageRunOptions ro;
  ro.batch = get<int>(ctx.block, "batch", 2048);
  ro.checkpoint_every = get<int>(ctx.block, "checkpoint_every", 250);

  const double b_theory = theory_growth(base.levels, base.n_min, beta, image.width);
  ctx.summary["b_theory"] = b_theory;
  struct CellSpec {
    int m;
    double offset;
  };
  std::vector<CellSpec> specs;
  for (int m : ms) specs.push_back({m, 0.0});
  for (int m : sweep_ms)
    for (double off : offsets)
      if (off != 0.0 || std::find(ms.begin(), ms.end(), m) == ms.end()) specs.push_back({m, off});

  const std::size_t ns = ctx.seeds.size();
  std::vector<ImageRun> runs(specs.size() * ns);
  parallel_for(runs.size(), ctx.parallel, [&](std::size_t i) {
    const CellSpec& spec = specs[i / ns];
    const std::uint64_t seed = ctx.seeds[i % ns];
    EncodingConfig cfg = base;
    cfg.growth = b_theory + spec.offset;
    cfg.rotation = spec.m == 1 ? RotationStrategy::identity() : RotationStrategy::progressive(spec.m);
    const std::string id = fmt::format("M{}_b{:.4f}", spec.m, cfg.growth);
    const double t0 = now_seconds();
    ImageRun r = run_image_cell(cfg, dec, opt, image, seed, ro);
    r.m = spec.m;
    runs[i] = r;
    if (r.ok) {
      ctx.write(fmt::format("traces/{}/s{}/trace.csv", id, seed), to_csv([&](std::ostream& os) {
                  os << "step,loss,psnr\n";
                  for (const auto& p : r.trace) fmt::print(os, "{},{},{}\n", p.step, num(p.loss), num(p.psnr));
                }));
      ctx.log(fmt::format("{} seed {}: psnr {:.3f} dB", id, seed, r.psnr));
    }
    ctx.record(id, seed, now_seconds() - t0, r.error);
  });

  std::ostringstream table, per_run;
  table << "M,b,b_offset,psnr_mean,psnr_std\n";
  per_run << "M,b,seed,psnr\n";
  for (std::size_t c = 0; c < specs.size(); ++c) {
    std::vector<double> v;
    for (std::size_t s = 0; s < ns; ++s) {
      const ImageRun& r = runs[c * ns + s];
      if (!r.ok) continue;
      v.push_back(r.psnr);
      fmt::print(per_run, "{},{},{},{}\n", specs[c].m, num(r.growth), r.seed, num(r.psnr));
    }
    if (v.empty()) continue;
    fmt::print(table, "{},{},{:g},{},{}\n", specs[c].m, num(b_theory + specs[c].offset), specs[c].offset,
               num(mean(v)), num(stddev(v)));
  }
  ctx.write("psnr_table.csv", table.str());
  ctx.write("psnr_runs.csv", per_run.str());
  return 0;
}

int cmd_plan(Context& ctx) {
  check_keys(ctx.block, "plan", {"out", "target_fwhm", "pixel_pitch", "image_size", "levels", "n_min", "beta",
                                 "dim", "table_size_log2", "table_size"});
  PlanRequest req;
  req.levels = get<int>(ctx.block, "levels", req.levels);
  req.n_min = get<double>(ctx.block, "n_min", req.n_min);
  req.beta = get<double>(ctx.block, "beta", req.beta);
  req.dim = get<int>(ctx.block, "dim", req.dim);
  if (ctx.block.contains("table_size_log2")) req.table_size = 1u << get<int>(ctx.block, "table_size_log2", 19);
  req.table_size = get<std::uint32_t>(ctx.block, "table_size", req.table_size);
  if (ctx.block.contains("pixel_pitch")) req.pixel_pitch = get<double>(ctx.block, "pixel_pitch", 0.0);
  if (ctx.block.contains("image_size")) req.pixel_pitch = 1.0 / get<int>(ctx.block, "image_size", 1);
  req.target_fwhm = get<double>(ctx.block, "target_fwhm", req.pixel_pitch.value_or(0.0));
  try {
    req.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  PlanReport rep;
  try {
    rep = plan_report(req);
  } catch (const Unachievable& e) {
    throw ConfigError(e.what());
  }
  fmt::print("{}", rep.text);
  ctx.write("plan.json", plan_json(rep).dump(2) + "\n");
  return 0;
}

}  // namespace

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path);
  try {
    json j = json::parse(is, nullptr, true, true);
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  }
}

void apply_sets(json& config, const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    const std::string path = s.substr(0, eq), text = s.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    json* node = &config;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (key.empty()) throw ConfigError("empty key in --set " + s);
      if (!node->is_object()) throw ConfigError("--set path crosses a non-object: " + path);
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      if (node->is_null()) *node = json::object();
      start = dot + 1;
    }
  }
}

EncodingConfig encoding_from_json(const json& j, EncodingConfig e) {
  check_keys(j, "encoding", {"dim", "levels", "n_min", "growth", "table_size", "table_size_log2", "features",
                             "rotation", "seed"});
  e.dim = get<int>(j, "dim", e.dim);
  e.levels = get<int>(j, "levels", e.levels);
  e.n_min = get<double>(j, "n_min", e.n_min);
  e.growth = get<double>(j, "growth", e.growth);
  if (j.contains("table_size_log2")) {
    const int l = get<int>(j, "table_size_log2", 19);
    if (l < 0 || l > 31) throw ConfigError("table_size_log2 must lie in 0..31");
    e.table_size = 1u << l;
  }
  e.table_size = get<std::uint32_t>(j, "table_size", e.table_size);
  e.features = get<int>(j, "features", e.features);
  e.seed = get<std::uint64_t>(j, "seed", e.seed);
  if (j.contains("rotation")) {
    const json& r = j.at("rotation");
    check_keys(r, "encoding.rotation", {"kind", "m", "solid"});
    const std::string kind = get<std::string>(r, "kind", "identity");
    if (kind == "identity") {
      e.rotation = RotationStrategy::identity();
    } else if (kind == "progressive") {
      e.rotation = RotationStrategy::progressive(get<int>(r, "m", 1));
    } else if (kind == "polyhedral") {
      try {
        e.rotation = RotationStrategy::polyhedral(parse_polyhedron(get<std::string>(r, "solid", "tetra")));
      } catch (const std::invalid_argument& ex) {
        throw ConfigError(ex.what());
      }
    } else {
      throw ConfigError("unknown rotation kind '" + kind + "'");
    }
  }
  try {
    e.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  return e;
}

DecoderSpec decoder_from_json(const json& j, DecoderSpec d) {
  check_keys(j, "decoder", {"depth", "width"});
  d.depth = get<int>(j, "depth", d.depth);
  d.width = get<int>(j, "width", d.width);
  try {
    d.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  return d;
}

OptimizerSpec optimizer_from_json(const json& j, OptimizerSpec o) {
  check_keys(j, "optimizer", {"kind", "lr", "beta1", "beta2", "eps", "momentum", "steps"});
  try {
    if (j.contains("kind")) o.kind = parse_optimizer(get<std::string>(j, "kind", "adam"));
    o.lr = get<double>(j, "lr", o.lr);
    o.beta1 = get<double>(j, "beta1", o.beta1);
    o.beta2 = get<double>(j, "beta2", o.beta2);
    o.eps = get<double>(j, "eps", o.eps);
    o.momentum = get<double>(j, "momentum", o.momentum);
    o.steps = get<int>(j, "steps", o.steps);
    o.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  return o;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += fmt::format(".tmp{}", static_cast<long>(::getpid()));
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << content;
    os.flush();
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

ImageRun run_image_cell(const EncodingConfig& config, const DecoderSpec& decoder, const OptimizerSpec& opt,
                        const Image& image, std::uint64_t seed, const ImageRunOptions& options) {
  ImageRun r;
  r.growth = config.growth;
  r.seed = seed;
  r.m = config.rotation.kind == RotationStrategy::Kind::kProgressive2d ? config.rotation.m : 1;
  try {
    FieldModel model(config, decoder, seed);
    ImageTrainOptions io;
    io.batch = options.batch;
    io.seed = seed;
    io.checkpoint_every = options.checkpoint_every;
    const ImageTrainResult res = train_image(model, image, opt, io);
    r.trace = res.trace;
    r.psnr = res.final_psnr();
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

double theory_growth(int levels, double n_min, double beta, int image_size) {
  PlanRequest req;
  req.levels = levels;
  req.n_min = n_min;
  req.beta = beta;
  req.target_fwhm = 1.0 / image_size;
  return solve_growth_factor(req).growth;
}

int run_lab(const std::string& subcommand, const json& config, const LabOverrides& overrides) {
  if (!kCommands.count(subcommand)) throw ConfigError("unknown subcommand '" + subcommand + "'");
  std::set<std::string> allowed = kShared;
  allowed.insert(kCommands.begin(), kCommands.end());
  json root = config;
  apply_sets(root, overrides.sets);
  check_keys(root, "config", allowed);

  Context ctx;
  ctx.command = subcommand;
  ctx.root = root;
  ctx.block = root.value(subcommand, json::object());
  if (!ctx.block.is_object()) throw ConfigError(subcommand + " block must be a JSON object");
  ctx.out = overrides.out.value_or(get<std::string>(ctx.block, "out", get<std::string>(root, "out", "out/" + subcommand)));
  ctx.seeds = overrides.seeds.value_or(
      get<std::vector<std::uint64_t>>(ctx.block, "seeds", get<std::vector<std::uint64_t>>(root, "seeds", {0, 1, 2})));
  if (ctx.seeds.empty()) throw ConfigError("seeds must be non-empty");
  ctx.parallel = overrides.parallel.value_or(get<int>(ctx.block, "parallel", get<int>(root, "parallel", 1)));
  if (ctx.parallel < 1) throw ConfigError("parallel must be >= 1");
  try {
    fs::create_directories(ctx.out);
  } catch (const fs::filesystem_error& e) {
    throw ConfigError(fmt::format("output directory {} is not writable: {}", ctx.out.string(), e.what()));
  }

  const double t0 = now_seconds();
  if (subcommand == "psf") cmd_psf(ctx);
  else if (subcommand == "two-point") cmd_two_point(ctx);
  else if (subcommand == "collision") cmd_collision(ctx);
  else if (subcommand == "rotate-sweep") cmd_rotate_sweep(ctx);
  else if (subcommand == "image") cmd_image(ctx);
  else cmd_plan(ctx);

  std::sort(ctx.outputs.begin(), ctx.outputs.end());
  std::sort(ctx.runs.begin(), ctx.runs.end(), [](const json& a, const json& b) {
    return std::tie(a["id"], a["seed"]) < std::tie(b["id"], b["seed"]);
  });
  std::sort(ctx.failures.begin(), ctx.failures.end());
  const json manifest{{"tool", "psf-lab"},
                      {"version", PSFLAB_VERSION},
                      {"command", subcommand},
                      {"config_hash", fmt::format("{:016x}", fnv1a64(root.dump()))},
                      {"config", root},
                      {"seeds", ctx.seeds},
                      {"parallel", ctx.parallel},
                      {"wall_seconds", now_seconds() - t0},
                      {"runs", ctx.runs},
                      {"outputs", ctx.outputs},
                      {"failures", ctx.failures},
                      {"flags", ctx.flags},
                      {"summary", ctx.summary}};
  write_file_atomic(ctx.out / "manifest.json", manifest.dump(2) + "\n");
  return ctx.failures.empty() ? kExitOk : kExitPartial;
}

}  // namespace psflab
