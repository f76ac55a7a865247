#include "layermon/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "layermon/errors.hpp"

namespace layermon {

GrayImage::GrayImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
  if (w < 1 || h < 1) throw ValidationError("image dimensions must be positive");
}

GrayImage::GrayImage(int w, int h, std::vector<std::uint8_t> data)
    : width(w), height(h), pixels(std::move(data)) {
  if (w < 1 || h < 1) throw ValidationError("image dimensions must be positive");
  if (pixels.size() != static_cast<std::size_t>(w) * h)
    throw ValidationError("pixel buffer size does not match dimensions");
}

FloatImage::FloatImage(int w, int h, double fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
  if (w < 1 || h < 1) throw ValidationError("image dimensions must be positive");
}

TempMap::TempMap(double lo, double hi) : t_min(lo), t_max(hi) {
  if (!(hi > lo)) throw ValidationError("temperature map requires t_max > t_min");
}

namespace {

// Reads one whitespace-delimited token; the header is plain "P5 w h maxval"
// with single whitespace separators (no comment lines).
bool next_token(std::istream& in, std::string& tok) {
  tok.clear();
  int c = in.get();
  if (c == EOF) return false;
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return !tok.empty();
}

long parse_int(const std::string& tok, const char* what) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](unsigned char ch) { return std::isdigit(ch); }))
    throw IoError(std::string("malformed PGM header: bad ") + what + " '" + tok + "'");
  return std::stol(tok);
}

}  // namespace

GrayImage load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file: " + path.string());

  std::string tok;
  if (!next_token(in, tok) || tok != "P5")
    throw IoError("malformed PGM header: expected magic 'P5' in " + path.string());
  if (!next_token(in, tok)) throw IoError("malformed PGM header: missing width in " + path.string());
  const long w = parse_int(tok, "width");
  if (!next_token(in, tok)) throw IoError("malformed PGM header: missing height in " + path.string());
  const long h = parse_int(tok, "height");
  if (!next_token(in, tok)) throw IoError("malformed PGM header: missing maxval in " + path.string());
  const long maxval = parse_int(tok, "maxval");

  if (w < 1 || h < 1)
    throw IoError("malformed PGM header: degenerate dimensions " + std::to_string(w) + "x" +
                  std::to_string(h) + " in " + path.string());
  if (maxval != 255)
    throw IoError("unsupported PGM maxval " + std::to_string(maxval) + " (expected 255) in " +
                  path.string());

  const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::vector<std::uint8_t> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count)
    throw IoError("truncated PGM payload in " + path.string() + ": expected " +
                  std::to_string(count) + " bytes, got " + std::to_string(in.gcount()));

  return GrayImage(static_cast<int>(w), static_cast<int>(h), std::move(data));
}

void save_image(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open image file for writing: " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write failure on " + path.string());
}

double pixel_to_temperature(std::uint8_t value, const TempMap& map) {
  return map.t_min + static_cast<double>(value) / 255.0 * (map.t_max - map.t_min);
}

GrayImage crop_roi(const GrayImage& img, const Rect& roi) {
  if (roi.w < 1 || roi.h < 1) throw ValidationError("crop rect must have positive extent");
  if (roi.x < 0 || roi.y < 0 || roi.x + roi.w > img.width || roi.y + roi.h > img.height)
    throw ValidationError("crop rect out of image bounds");
  GrayImage out(roi.w, roi.h);
  for (int y = 0; y < roi.h; ++y)
    for (int x = 0; x < roi.w; ++x) out.at(x, y) = img.at(roi.x + x, roi.y + y);
  return out;
}

ImageStats image_stats(std::span<const GrayImage> imgs) {
  if (imgs.empty()) throw ValidationError("image_stats requires a non-empty image set");
  double mn = std::numeric_limits<double>::infinity();
  double mx = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  double sum2 = 0.0;
  std::size_t n = 0;
  for (const auto& img : imgs) {
    for (std::uint8_t v : img.pixels) {
      const double d = v;
      mn = std::min(mn, d);
      mx = std::max(mx, d);
      sum += d;
      sum2 += d * d;
    }
    n += img.pixels.size();
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
  return ImageStats{mn, mx, mean, std::sqrt(var)};
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    norm += w;
  }
  for (double& w : k) w /= norm;
  return k;
}

}  // namespace

FloatImage gaussian_blur(const FloatImage& img, double sigma) {
  if (sigma < 0.0) throw ValidationError("blur sigma must be non-negative");
  if (sigma == 0.0) return img;

  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int w = img.width;
  const int h = img.height;

  FloatImage tmp(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int sx = std::clamp(x + i, 0, w - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * img.at(sx, y);
      }
      tmp.at(x, y) = acc;
    }
  }
  FloatImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int sy = std::clamp(y + i, 0, h - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(x, sy);
      }
      out.at(x, y) = acc;
    }
  }
  return out;
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma < 0.0) throw ValidationError("blur sigma must be non-negative");
  if (sigma == 0.0) return img;
  return to_gray(gaussian_blur(to_float(img), sigma));
}

FloatImage to_float(const GrayImage& img) {
  FloatImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) out.pixels[i] = img.pixels[i];
  return out;
}

GrayImage to_gray(const FloatImage& img) {
  GrayImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    // floor(v + 0.5) instead of nearbyint: independent of fenv rounding mode.
    const double v = std::floor(img.pixels[i] + 0.5);
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

double bilinear_sample(const FloatImage& img, double x, double y) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;

  auto px = [&](int xi, int yi) -> double {
    if (xi < 0 || yi < 0 || xi >= img.width || yi >= img.height) return 0.0;
    return img.at(xi, yi);
  };
  const double top = (1.0 - fx) * px(x0, y0) + fx * px(x0 + 1, y0);
  const double bot = (1.0 - fx) * px(x0, y0 + 1) + fx * px(x0 + 1, y0 + 1);
  return (1.0 - fy) * top + fy * bot;
}

}  // namespace layermon
