#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace layermon {

/// 8-bit single-channel raster, row-major. The common currency of the whole
/// pipeline; immutable by convention (operations return new images).
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0);
  GrayImage(int w, int h, std::vector<std::uint8_t> data);

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return pixels.size(); }

  bool operator==(const GrayImage&) const = default;
};

/// Double-precision raster used for intermediate arithmetic (blur, warping,
/// synthesis) so quantisation happens exactly once at the end.
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  FloatImage() = default;
  FloatImage(int w, int h, double fill = 0.0);

  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Linear intensity-to-temperature mapping: 0 -> t_min, 255 -> t_max.
struct TempMap {
  double t_min;
  double t_max;

  TempMap(double lo, double hi);
};

/// A point in continuous pixel coordinates.
struct Vec2px {
  double x = 0.0;
  double y = 0.0;
};

/// Axis-aligned pixel rectangle, top-left anchored.
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
};

/// Intensity statistics pooled over one or more images.
struct ImageStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;
};

/// Reads a binary PGM (P5, maxval 255). Distinct errors for a missing file,
/// a malformed or degenerate header, an unsupported maxval, and a truncated
/// payload.
GrayImage load_image(const std::filesystem::path& path);

/// Writes binary PGM; load_image(save_image(img)) is byte-exact.
void save_image(const GrayImage& img, const std::filesystem::path& path);

double pixel_to_temperature(std::uint8_t value, const TempMap& map);

GrayImage crop_roi(const GrayImage& img, const Rect& roi);

ImageStats image_stats(std::span<const GrayImage> imgs);

/// Separable Gaussian, kernel radius ceil(3*sigma), clamp-to-edge borders,
/// float arithmetic with one final round. sigma == 0 returns the input.
GrayImage gaussian_blur(const GrayImage& img, double sigma);
FloatImage gaussian_blur(const FloatImage& img, double sigma);

FloatImage to_float(const GrayImage& img);
/// Rounds to nearest and clamps to [0, 255].
GrayImage to_gray(const FloatImage& img);

/// Bilinear sample at (x, y); coordinates outside the image read as 0.
double bilinear_sample(const FloatImage& img, double x, double y);

}  // namespace layermon
