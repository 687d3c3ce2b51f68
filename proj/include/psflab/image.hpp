// Image containers, 8-bit PNG/PPM ingestion and built-in synthetic targets.

#pragma once

#include <string>
#include <vector>

namespace psflab {

/// Row-major H x W x C image with values normalized to [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, 0.0) {}

  double& at(int row, int col, int ch) { return data[(static_cast<std::size_t>(row) * width + col) * channels + ch]; }
  double at(int row, int col, int ch) const { return data[(static_cast<std::size_t>(row) * width + col) * channels + ch]; }
  bool square() const { return height == width; }
};

Image load_image(const std::string& path);
void save_ppm(const Image& image, const std::string& path);

/// Largest centered square crop.
Image center_crop_square(const Image& image);

Image constant_image(int size, double value, int channels = 3);
/// Sinusoidal stripes at `angle_deg` from the x axis with a period in pixels.
Image diagonal_stripes(int size, double period_px = 6.0, double angle_deg = 30.0);
/// Radial chirp whose local frequency grows with radius.
Image radial_chirp(int size, double max_cycles = 0.25);
Image checkerboard(int size, int cell_px = 8);

/// Builds a named synthetic image: "stripes", "chirp", "checker", "gray".
Image synthetic_image(const std::string& name, int size);

}  // namespace psflab
