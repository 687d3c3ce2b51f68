// Config-driven experiment runner behind the psf-lab command line.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "psflab/field_model.hpp"
#include "psflab/image.hpp"
#include "psflab/training.hpp"

namespace psflab {

/// Invalid or unreadable configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode { kExitOk = 0, kExitPartial = 1, kExitInvalid = 2 };

struct LabOverrides {
  std::optional<std::string> out;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<int> parallel;
  std::vector<std::string> sets;  // "block.key=json" assignments
};

/// Reads a JSON config file; an empty path yields an empty object.
nlohmann::json load_config(const std::string& path);

/// Applies "a.b.c=value" assignments; the value is parsed as JSON, falling
/// back to a plain string.
void apply_sets(nlohmann::json& config, const std::vector<std::string>& sets);

EncodingConfig encoding_from_json(const nlohmann::json& j, EncodingConfig base = {});
DecoderSpec decoder_from_json(const nlohmann::json& j, DecoderSpec base = {});
OptimizerSpec optimizer_from_json(const nlohmann::json& j, OptimizerSpec base = {});

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::uint64_t fnv1a64(const std::string& bytes);

struct ImageRunOptions {
  int batch = 4096;
  int checkpoint_every = 250;
};

struct ImageRun {
  double growth = 0.0;
  int m = 1;
  std::uint64_t seed = 0;
  double psnr = 0.0;
  std::vector<PsnrPoint> trace;
  bool ok = true;
  std::string error;
};

/// Trains one image-regression model and returns its final full-image PSNR.
ImageRun run_image_cell(const EncodingConfig& config, const DecoderSpec& decoder, const OptimizerSpec& opt,
                        const Image& image, std::uint64_t seed, const ImageRunOptions& options);

/// Growth factor whose predicted empirical FWHM (beta / n_avg) is one pixel.
double theory_growth(int levels, double n_min, double beta, int image_size);

/// Runs a subcommand (psf, two-point, collision, rotate-sweep, image, plan)
/// and writes its outputs plus manifest.json. Returns the process exit code.
int run_lab(const std::string& subcommand, const nlohmann::json& config, const LabOverrides& overrides);

}  // namespace psflab
