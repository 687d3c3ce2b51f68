#include "psflab/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace psflab {

namespace {

bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  std::string tail = s.substr(s.size() - suffix.size());
  std::transform(tail.begin(), tail.end(), tail.begin(), [](unsigned char c) { return std::tolower(c); });
  return tail == suffix;
}

Image load_png(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialization failed");
  }
  Image image;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed decoding PNG " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int c = png_get_channels(png, info);
  pixels.resize(static_cast<std::size_t>(w) * h * c);
  rows.resize(h);
  for (int r = 0; r < h; ++r) rows[r] = pixels.data() + static_cast<std::size_t>(r) * w * c;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  image = Image(h, w, c);
  for (std::size_t i = 0; i < pixels.size(); ++i) image.data[i] = pixels[i] / 255.0;
  return image;
}

void skip_ppm_space(std::istream& is) {
  while (is) {
    const int ch = is.peek();
    if (ch == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(ch)) {
      is.get();
    } else {
      break;
    }
  }
}

Image load_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6" && magic != "P5") throw std::runtime_error(path + ": only binary P5/P6 supported");
  const int channels = magic == "P6" ? 3 : 1;
  int w = 0, h = 0, maxval = 0;
  skip_ppm_space(is);
  is >> w;
  skip_ppm_space(is);
  is >> h;
  skip_ppm_space(is);
  is >> maxval;
  is.get();
  if (!is || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error(path + ": unsupported PNM header (8-bit only)");
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * channels);
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw std::runtime_error(path + ": truncated pixel data");
  Image image(h, w, channels);
  for (std::size_t i = 0; i < bytes.size(); ++i) image.data[i] = bytes[i] / static_cast<double>(maxval);
  return image;
}

}  // namespace

Image load_image(const std::string& path) {
  if (has_suffix(path, ".png")) return load_png(path);
  if (has_suffix(path, ".ppm") || has_suffix(path, ".pgm") || has_suffix(path, ".pnm")) return load_pnm(path);
  throw std::invalid_argument("unsupported image format: " + path);
}

void save_ppm(const Image& image, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        const double v = image.at(r, c, std::min(ch, image.channels - 1));
        os.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
      }
}

Image center_crop_square(const Image& image) {
  const int side = std::min(image.height, image.width);
  const int r0 = (image.height - side) / 2;
  const int c0 = (image.width - side) / 2;
  Image out(side, side, image.channels);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      for (int ch = 0; ch < image.channels; ++ch) out.at(r, c, ch) = image.at(r + r0, c + c0, ch);
  return out;
}

Image constant_image(int size, double value, int channels) {
  Image out(size, size, channels);
  std::fill(out.data.begin(), out.data.end(), value);
  return out;
}

Image diagonal_stripes(int size, double period_px, double angle_deg) {
  Image out(size, size, 3);
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double kx = std::cos(a) * 2.0 * std::numbers::pi / period_px;
  const double ky = std::sin(a) * 2.0 * std::numbers::pi / period_px;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double phase = kx * c + ky * r;
      out.at(r, c, 0) = 0.5 + 0.5 * std::sin(phase);
      out.at(r, c, 1) = 0.5 + 0.5 * std::sin(phase + 2.0 * std::numbers::pi / 3.0);
      out.at(r, c, 2) = 0.5 + 0.5 * std::sin(phase + 4.0 * std::numbers::pi / 3.0);
    }
  return out;
}

Image radial_chirp(int size, double max_cycles) {
  Image out(size, size, 3);
  const double half = size / 2.0;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double dx = c + 0.5 - half, dy = r + 0.5 - half;
      const double rad = std::sqrt(dx * dx + dy * dy);
      // Instantaneous frequency rises linearly to max_cycles per pixel at the edge.
      const double v = 0.5 + 0.5 * std::cos(std::numbers::pi * max_cycles * rad * rad / half);
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = v;
    }
  return out;
}

Image checkerboard(int size, int cell_px) {
  Image out(size, size, 3);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const double v = ((r / cell_px + c / cell_px) % 2) ? 1.0 : 0.0;
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = v;
    }
  return out;
}

Image synthetic_image(const std::string& name, int size) {
  if (name == "stripes") return diagonal_stripes(size);
  if (name == "chirp") return radial_chirp(size);
  if (name == "checker") return checkerboard(size);
  if (name == "gray") return constant_image(size, 0.5);
  throw std::invalid_argument("unknown synthetic image '" + name + "'");
}

}  // namespace psflab
