// psf-lab: runs the point-spread-function experiments from a JSON config.

#include <fmt/format.h>

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "psflab/lab.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw psflab::ConfigError("bad seed '" + item + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw psflab::ConfigError("--seeds needs at least one value");
  return seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-spread-function laboratory for multi-resolution hash encodings"};
  app.set_version_flag("--version", std::string(PSFLAB_VERSION));

  std::string command, config_path, out, seeds;
  int parallel = 0;
  std::vector<std::string> sets;
  app.add_option("command", command, "psf | two-point | collision | rotate-sweep | image | plan")
      ->required()
      ->check(CLI::IsMember({"psf", "two-point", "collision", "rotate-sweep", "image", "plan"}));
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out, "output directory (overrides the config)");
  app.add_option("--seeds", seeds, "comma-separated seeds, e.g. 0,1,2");
  app.add_option("--parallel", parallel, "worker threads for sweep cells")->check(CLI::PositiveNumber);
  app.add_option("--set", sets, "config override, e.g. psf.cells=[[8,1.4]] (repeatable)");

  // Convenience flags for plan; they land in the plan block.
  double target = 0, pitch = 0, beta = 0, n_min = 0;
  int levels = 0, dim = 0, table_log2 = -1, image_size = 0;
  app.add_option("--target", target, "plan: target FWHM in domain units");
  app.add_option("--pitch", pitch, "plan: pixel pitch in domain units");
  app.add_option("--image-size", image_size, "plan: pixel pitch = 1 / size");
  app.add_option("--levels", levels, "plan: number of levels");
  app.add_option("--n-min", n_min, "plan: coarsest resolution");
  app.add_option("--beta", beta, "plan: assumed total broadening");
  app.add_option("--dim", dim, "plan: input dimension");
  app.add_option("--table-log2", table_log2, "plan: log2 of the table size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : psflab::kExitInvalid;
  }

  try {
    psflab::LabOverrides ov;
    if (!out.empty()) ov.out = out;
    if (!seeds.empty()) ov.seeds = parse_seeds(seeds);
    if (parallel > 0) ov.parallel = parallel;
    ov.sets = sets;
    auto plan_set = [&](const char* key, const std::string& value) {
      ov.sets.push_back(fmt::format("plan.{}={}", key, value));
    };
    if (target > 0) plan_set("target_fwhm", fmt::format("{:.17g}", target));
    if (pitch > 0) plan_set("pixel_pitch", fmt::format("{:.17g}", pitch));
    if (image_size > 0) plan_set("image_size", std::to_string(image_size));
    if (levels > 0) plan_set("levels", std::to_string(levels));
    if (n_min > 0) plan_set("n_min", fmt::format("{:.17g}", n_min));
    if (beta > 0) plan_set("beta", fmt::format("{:.17g}", beta));
    if (dim > 0) plan_set("dim", std::to_string(dim));
    if (table_log2 >= 0) plan_set("table_size_log2", std::to_string(table_log2));

    const nlohmann::json config = psflab::load_config(config_path);
    const int code = psflab::run_lab(command, config, ov);
    if (code == psflab::kExitPartial) fmt::print(stderr, "psf-lab: some runs failed; see manifest.json\n");
    return code;
  } catch (const psflab::ConfigError& e) {
    fmt::print(stderr, "psf-lab: {}\n", e.what());
    return psflab::kExitInvalid;
  } catch (const std::exception& e) {
    fmt::print(stderr, "psf-lab: {}\n", e.what());
    return psflab::kExitPartial;
  }
}
