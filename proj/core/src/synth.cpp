#include "layermon/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "layermon/errors.hpp"
#include "layermon/parallel.hpp"
#include "text_io.hpp"

namespace layermon {

std::string to_string(Scope scope) {
  return scope == Scope::jobwise ? "jobwise" : "layerwise";
}

Scope scope_from_string(const std::string& s) {
  if (s == "jobwise") return Scope::jobwise;
  if (s == "layerwise") return Scope::layerwise;
  throw ValidationError("unknown scope '" + s + "' (expected jobwise or layerwise)");
}

std::string to_string(DefectClass cls) {
  switch (cls) {
    case DefectClass::good: return "good";
    case DefectClass::agglomerate: return "agglomerate";
    case DefectClass::foreign_object: return "foreign_object";
    case DefectClass::porous: return "porous";
    case DefectClass::striation: return "striation";
  }
  return "?";
}

DefectClass defect_class_from_string(const std::string& s) {
  if (s == "good") return DefectClass::good;
  if (s == "agglomerate") return DefectClass::agglomerate;
  if (s == "foreign_object") return DefectClass::foreign_object;
  if (s == "porous") return DefectClass::porous;
  if (s == "striation") return DefectClass::striation;
  throw ValidationError("unknown defect class '" + s + "'");
}

const std::vector<DefectClass>& all_defect_classes() {
  static const std::vector<DefectClass> classes = {
      DefectClass::good, DefectClass::agglomerate, DefectClass::foreign_object,
      DefectClass::porous, DefectClass::striation};
  return classes;
}

DefectSpec DefectSpec::make(DefectClass cls, int layer_begin, int layer_end) {
  DefectSpec spec;
  spec.cls = cls;
  spec.layer_begin = layer_begin;
  spec.layer_end = layer_end;
  if (cls == DefectClass::agglomerate) spec.diameter_px = {10.0, 40.0};
  return spec;
}

// ---------------------------------------------------------------------------
// Config

namespace {

void check_interval(const Interval& iv, const std::string& name, double lo_bound,
                    double hi_bound) {
  if (!(iv.lo <= iv.hi))
    throw ValidationError("randomisation interval '" + name + "' has lo > hi");
  if (iv.lo < lo_bound || iv.hi > hi_bound)
    throw ValidationError("randomisation interval '" + name + "' outside its admissible range");
  if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi))
    throw ValidationError("randomisation interval '" + name + "' is not finite");
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

void RandomisationConfig::validate() const {
  check_interval(bg_intensity, "bg_intensity", 0.0, 255.0);
  check_interval(part_intensity, "part_intensity", 0.0, 255.0);
  check_interval(position_jitter, "position_jitter", -kInf, kInf);
  check_interval(translucency_alpha, "translucency_alpha", 0.0, 1.0);
  check_interval(contour_blur_sigma, "contour_blur_sigma", 0.0, kInf);
  check_interval(per_layer_noise_sigma, "per_layer_noise_sigma", 0.0, kInf);
}

namespace {

nlohmann::ordered_json param_json(const Interval& iv, Scope scope) {
  return {{"lo", iv.lo}, {"hi", iv.hi}, {"scope", to_string(scope)}};
}

void read_param(const nlohmann::json& j, const char* key, Interval& iv, Scope& scope) {
  if (!j.contains(key)) return;
  const auto& p = j.at(key);
  if (p.contains("lo")) iv.lo = p.at("lo").get<double>();
  if (p.contains("hi")) iv.hi = p.at("hi").get<double>();
  if (p.contains("scope")) scope = scope_from_string(p.at("scope").get<std::string>());
}

}  // namespace

std::string RandomisationConfig::to_json() const {
  nlohmann::ordered_json j;
  j["bg_intensity"] = param_json(bg_intensity, bg_intensity_scope);
  j["part_intensity"] = param_json(part_intensity, part_intensity_scope);
  j["position_jitter"] = param_json(position_jitter, position_jitter_scope);
  j["translucency_alpha"] = param_json(translucency_alpha, translucency_alpha_scope);
  j["contour_blur_sigma"] = param_json(contour_blur_sigma, contour_blur_sigma_scope);
  j["per_layer_noise_sigma"] = param_json(per_layer_noise_sigma, per_layer_noise_sigma_scope);
  return j.dump(2) + "\n";
}

RandomisationConfig RandomisationConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("randomisation config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("randomisation config must be a JSON object");
  static const char* known[] = {"bg_intensity",       "part_intensity",
                                "position_jitter",    "translucency_alpha",
                                "contour_blur_sigma", "per_layer_noise_sigma"};
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char* k) { return key == k; }) == std::end(known))
      throw ValidationError("randomisation config has unknown key '" + key + "'");
    (void)value;
  }
  RandomisationConfig cfg;
  read_param(j, "bg_intensity", cfg.bg_intensity, cfg.bg_intensity_scope);
  read_param(j, "part_intensity", cfg.part_intensity, cfg.part_intensity_scope);
  read_param(j, "position_jitter", cfg.position_jitter, cfg.position_jitter_scope);
  read_param(j, "translucency_alpha", cfg.translucency_alpha, cfg.translucency_alpha_scope);
  read_param(j, "contour_blur_sigma", cfg.contour_blur_sigma, cfg.contour_blur_sigma_scope);
  read_param(j, "per_layer_noise_sigma", cfg.per_layer_noise_sigma,
             cfg.per_layer_noise_sigma_scope);
  cfg.validate();
  return cfg;
}

RandomisationConfig derive_randomisation_intervals(std::span<const GrayImage> sample,
                                                   std::span<const GrayImage> part_masks) {
  if (sample.empty()) throw ValidationError("derive_randomisation_intervals: empty sample");
  if (sample.size() != part_masks.size())
    throw ValidationError("derive_randomisation_intervals: image/mask count mismatch");

  double bg_min = 256.0, bg_max = -1.0, part_min = 256.0, part_max = -1.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const GrayImage& img = sample[i];
    const GrayImage& mask = part_masks[i];
    if (img.width != mask.width || img.height != mask.height)
      throw ValidationError("derive_randomisation_intervals: image/mask dimension mismatch");
    for (std::size_t p = 0; p < img.pixels.size(); ++p) {
      const double v = img.pixels[p];
      if (mask.pixels[p] != 0) {
        part_min = std::min(part_min, v);
        part_max = std::max(part_max, v);
      } else {
        bg_min = std::min(bg_min, v);
        bg_max = std::max(bg_max, v);
      }
    }
  }

  RandomisationConfig cfg;
  if (bg_max >= 0.0) cfg.bg_intensity = {bg_min, bg_max};
  if (part_max >= 0.0) cfg.part_intensity = {part_min, part_max};
  return cfg;
}

// ---------------------------------------------------------------------------
// Rasterisation

namespace {

std::uint8_t clamp_round(double v) {
  const double r = std::floor(v + 0.5);
  if (r <= 0.0) return 0;
  if (r >= 255.0) return 255;
  return static_cast<std::uint8_t>(r);
}

double sample_interval(Rng& rng, const Interval& iv) {
  return iv.lo + rng.uniform01() * (iv.hi - iv.lo);
}

/// Jobwise-scoped values pre-drawn by generate_job; empty for standalone
/// rasterize_layer calls.
struct JobSamples {
  std::optional<double> bg, part, alpha, blur_sigma, noise_sigma;
  std::optional<std::pair<double, double>> jitter;
};

LayerSample sample_layer_params(const RandomisationConfig& cfg, Rng& rng,
                                const JobSamples* job) {
  LayerSample s;
  s.bg = (job && job->bg) ? *job->bg : sample_interval(rng, cfg.bg_intensity);
  s.part = (job && job->part) ? *job->part : sample_interval(rng, cfg.part_intensity);
  if (job && job->jitter) {
    s.dx = job->jitter->first;
    s.dy = job->jitter->second;
  } else {
    s.dx = sample_interval(rng, cfg.position_jitter);
    s.dy = sample_interval(rng, cfg.position_jitter);
  }
  s.alpha = (job && job->alpha) ? *job->alpha : sample_interval(rng, cfg.translucency_alpha);
  s.blur_sigma =
      (job && job->blur_sigma) ? *job->blur_sigma : sample_interval(rng, cfg.contour_blur_sigma);
  s.noise_sigma = (job && job->noise_sigma) ? *job->noise_sigma
                                            : sample_interval(rng, cfg.per_layer_noise_sigma);
  return s;
}

/// Even-odd scanline fill at pixel centers: pixel (i, j) is covered iff its
/// center (i + 0.5, j + 0.5) lies inside. Fills image and mask in one pass.
void fill_contours(const std::vector<std::vector<Vec2>>& polys_px, double part_value,
                   FloatImage& canvas, GrayImage& mask) {
  std::vector<double> crossings;
  for (int row = 0; row < canvas.height; ++row) {
    const double yc = row + 0.5;
    crossings.clear();
    for (const auto& poly : polys_px) {
      const std::size_t n = poly.size();
      for (std::size_t i = 0; i < n; ++i) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[(i + 1) % n];
        if ((a.y <= yc) != (b.y <= yc))
          crossings.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
      }
    }
    std::sort(crossings.begin(), crossings.end());
    for (std::size_t i = 0; i + 1 < crossings.size(); i += 2) {
      int x0 = static_cast<int>(std::ceil(crossings[i] - 0.5));
      int x1 = static_cast<int>(std::ceil(crossings[i + 1] - 0.5));
      x0 = std::max(x0, 0);
      x1 = std::min(x1, canvas.width);
      for (int x = x0; x < x1; ++x) {
        canvas.at(x, row) = part_value;
        mask.at(x, row) = 255;
      }
    }
  }
}

struct FillResult {
  GrayImage image;      // filled, blended, rounded; not yet blurred or noised
  GrayImage part_mask;
  bool clipped = false;
};

FillResult raster_fill(const std::vector<Contour>& contours, const LayerSample& s,
                       const GrayImage* prev, int width, int height, double scale,
                       Vec2 origin_mm) {
  FillResult out;
  out.part_mask = GrayImage(width, height, 0);

  std::vector<std::vector<Vec2>> polys_px;
  polys_px.reserve(contours.size());
  for (const Contour& c : contours) {
    std::vector<Vec2> poly;
    poly.reserve(c.points.size());
    for (const Vec2& p : c.points) {
      const double px = (p.x - origin_mm.x) * scale + s.dx;
      const double py = (p.y - origin_mm.y) * scale + s.dy;
      if (px < 0.0 || py < 0.0 || px > width || py > height) out.clipped = true;
      poly.push_back({px, py});
    }
    polys_px.push_back(std::move(poly));
  }

  FloatImage canvas(width, height, s.bg);
  fill_contours(polys_px, s.part, canvas, out.part_mask);

  if (prev != nullptr) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        canvas.at(x, y) = s.alpha * canvas.at(x, y) + (1.0 - s.alpha) * prev->at(x, y);
  }

  out.image = to_gray(canvas);
  return out;
}

GrayImage finish_layer(const GrayImage& img, const LayerSample& s, Rng& rng) {
  GrayImage out = gaussian_blur(img, s.blur_sigma);
  if (s.noise_sigma > 0.0) {
    for (auto& px : out.pixels) px = clamp_round(px + rng.normal() * s.noise_sigma);
  }
  return out;
}

}  // namespace

RasterResult rasterize_layer(const std::vector<Contour>& contours, const RandomisationConfig& cfg,
                             Rng& rng, const GrayImage* prev, int width, int height, double scale,
                             Vec2 origin_mm) {
  cfg.validate();
  if (width < 1 || height < 1) throw ValidationError("rasterize_layer: empty canvas");
  if (!(scale > 0.0)) throw ValidationError("rasterize_layer: scale must be positive");
  if (prev != nullptr && (prev->width != width || prev->height != height))
    throw ValidationError("rasterize_layer: previous layer dimensions differ from canvas");

  RasterResult result;
  result.sample = sample_layer_params(cfg, rng, nullptr);
  FillResult fill = raster_fill(contours, result.sample, prev, width, height, scale, origin_mm);
  result.part_mask = std::move(fill.part_mask);
  result.clipped = fill.clipped;
  result.image = finish_layer(fill.image, result.sample, rng);
  return result;
}

// ---------------------------------------------------------------------------
// Defect injection

namespace {

/// exp(-t) for t >= 0 by a fixed-length series for exp(t), pure arithmetic so
/// the generated pixels do not depend on the platform's libm.
double exp_neg(double t) {
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k <= 24; ++k) {
    term *= t / k;
    sum += term;
  }
  return 1.0 / sum;
}

/// Uniform point in the disc of the given radius, by rejection from the
/// bounding square.
Vec2 point_in_disc(Rng& rng, double radius) {
  while (true) {
    const double x = (2.0 * rng.uniform01() - 1.0) * radius;
    const double y = (2.0 * rng.uniform01() - 1.0) * radius;
    if (x * x + y * y <= radius * radius) return {x, y};
  }
}

double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Monotone-chain convex hull, counter-clockwise.
std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  const std::size_t n = pts.size();
  std::vector<Vec2> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k > 1 ? k - 1 : k);
  return hull;
}

double sample_center(Rng& rng, double margin, double extent) {
  if (2.0 * margin >= extent) return extent / 2.0;
  return margin + rng.uniform01() * (extent - 2.0 * margin);
}

InjectResult inject_striation(const GrayImage& img, const DefectSpec& spec, Rng& rng) {
  const int max_width = img.width;
  int band = static_cast<int>(std::floor(sample_interval(rng, spec.width_px) + 0.5));
  band = std::clamp(band, 1, max_width);
  const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width - band + 1)));

  InjectResult out;
  out.image = img;
  out.mask = GrayImage(img.width, img.height, 0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = x0; x < x0 + band; ++x) {
      out.image.at(x, y) = clamp_round(img.at(x, y) + spec.intensity_offset);
      out.mask.at(x, y) = 255;
    }
  }
  nlohmann::ordered_json j{{"x", x0}, {"width", band}, {"offset", spec.intensity_offset}};
  out.params_json = j.dump();
  return out;
}

InjectResult inject_foreign_object(const GrayImage& img, const DefectSpec& spec, Rng& rng) {
  const double diameter = sample_interval(rng, spec.diameter_px);
  const double cx = sample_center(rng, diameter / 2.0, img.width);
  const double cy = sample_center(rng, diameter / 2.0, img.height);

  std::vector<Vec2> pts(10);
  for (auto& p : pts) {
    const Vec2 d = point_in_disc(rng, diameter / 2.0);
    p = {cx + d.x, cy + d.y};
  }
  const std::vector<Vec2> hull = convex_hull(std::move(pts));

  InjectResult out;
  out.image = img;
  out.mask = GrayImage(img.width, img.height, 0);
  if (hull.size() >= 3) {
    FloatImage scratch(img.width, img.height, 0.0);
    fill_contours({hull}, 1.0, scratch, out.mask);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        if (out.mask.at(x, y) != 0)
          out.image.at(x, y) = clamp_round(img.at(x, y) + spec.intensity_offset);
  }
  nlohmann::ordered_json j{
      {"cx", cx}, {"cy", cy}, {"diameter", diameter}, {"offset", spec.intensity_offset}};
  out.params_json = j.dump();
  return out;
}

InjectResult inject_agglomerate(const GrayImage& img, const DefectSpec& spec, Rng& rng) {
  const double diameter = sample_interval(rng, spec.diameter_px);
  const double cx = sample_center(rng, diameter / 2.0, img.width);
  const double cy = sample_center(rng, diameter / 2.0, img.height);
  const double radius = diameter / 2.0;
  const double sigma = radius / 2.0;

  InjectResult out;
  out.image = img;
  out.mask = GrayImage(img.width, img.height, 0);
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + radius)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double ddx = (x + 0.5) - cx;
      const double ddy = (y + 0.5) - cy;
      const double r2 = ddx * ddx + ddy * ddy;
      if (r2 > radius * radius) continue;
      out.mask.at(x, y) = 255;
      const double bump = spec.intensity_offset * exp_neg(r2 / (2.0 * sigma * sigma));
      out.image.at(x, y) = clamp_round(img.at(x, y) + bump);
    }
  }
  nlohmann::ordered_json j{
      {"cx", cx}, {"cy", cy}, {"diameter", diameter}, {"offset", spec.intensity_offset}};
  out.params_json = j.dump();
  return out;
}

InjectResult inject_porous(const GrayImage& img, const DefectSpec& spec, Rng& rng,
                           const GrayImage* part_mask) {
  if (part_mask == nullptr)
    throw ValidationError("inject_defect: porous defect requires a part mask");
  if (part_mask->width != img.width || part_mask->height != img.height)
    throw ValidationError("inject_defect: part mask dimensions differ from image");

  std::vector<std::size_t> part_pixels;
  for (std::size_t i = 0; i < part_mask->pixels.size(); ++i)
    if (part_mask->pixels[i] != 0) part_pixels.push_back(i);
  if (part_pixels.empty())
    throw ValidationError("inject_defect: porous defect on empty part region");

  std::size_t k = static_cast<std::size_t>(
      std::floor(spec.density * static_cast<double>(part_pixels.size()) + 0.5));
  k = std::clamp<std::size_t>(k, 1, part_pixels.size());

  // Partial Fisher-Yates: the first k entries end up a uniform sample.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(part_pixels.size() - i));
    std::swap(part_pixels[i], part_pixels[j]);
  }

  InjectResult out;
  out.image = img;
  out.mask = GrayImage(img.width, img.height, 0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t p = part_pixels[i];
    out.image.pixels[p] = clamp_round(static_cast<double>(img.pixels[p]) - spec.intensity_offset);
    out.mask.pixels[p] = 255;
  }
  nlohmann::ordered_json j{{"count", k}, {"offset", spec.intensity_offset}};
  out.params_json = j.dump();
  return out;
}

}  // namespace

InjectResult inject_defect(const GrayImage& img, const DefectSpec& spec, Rng& rng,
                           const GrayImage* part_mask) {
  if (img.width < 1 || img.height < 1) throw ValidationError("inject_defect: empty image");
  switch (spec.cls) {
    case DefectClass::good:
      throw ValidationError("inject_defect: nothing to inject for class 'good'");
    case DefectClass::striation: return inject_striation(img, spec, rng);
    case DefectClass::foreign_object: return inject_foreign_object(img, spec, rng);
    case DefectClass::agglomerate: return inject_agglomerate(img, spec, rng);
    case DefectClass::porous: return inject_porous(img, spec, rng, part_mask);
  }
  throw ValidationError("inject_defect: bad defect class");
}

// ---------------------------------------------------------------------------
// Job and dataset generation

namespace {

std::string format_image_name(int job_id, int layer) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "job%03d_layer%04d.pgm", job_id, layer);
  return buf;
}

}  // namespace

JobResult generate_job(const SliceStack& stack, const RandomisationConfig& cfg,
                       std::uint64_t seed, const std::vector<DefectSpec>& plan, int width,
                       int height, double scale, int job_id) {
  cfg.validate();
  if (stack.layers.empty()) throw ValidationError("generate_job: slice stack has no layers");
  if (width < 1 || height < 1) throw ValidationError("generate_job: empty canvas");
  if (!(scale > 0.0)) throw ValidationError("generate_job: scale must be positive");

  const int layer_count = static_cast<int>(stack.layers.size());
  for (const DefectSpec& spec : plan) {
    if (spec.cls == DefectClass::good) continue;
    if (spec.layer_end < spec.layer_begin)
      throw ValidationError("generate_job: defect '" + to_string(spec.cls) +
                            "' has an empty layer range");
    if (spec.layer_begin < 0 || spec.layer_end >= layer_count)
      throw ValidationError("generate_job: defect layers [" + std::to_string(spec.layer_begin) +
                            ", " + std::to_string(spec.layer_end) + "] outside stack of " +
                            std::to_string(layer_count) + " layers");
  }

  // Center the part; the canvas origin is chosen so the slice bounding box
  // midpoint lands mid-canvas before jitter.
  double min_x = kInf, min_y = kInf, max_x = -kInf, max_y = -kInf;
  for (const SliceLayer& layer : stack.layers)
    for (const Contour& c : layer.contours)
      for (const Vec2& p : c.points) {
        min_x = std::min(min_x, p.x);
        min_y = std::min(min_y, p.y);
        max_x = std::max(max_x, p.x);
        max_y = std::max(max_y, p.y);
      }
  Vec2 origin{0.0, 0.0};
  if (min_x <= max_x) {
    origin.x = (min_x + max_x) / 2.0 - width / (2.0 * scale);
    origin.y = (min_y + max_y) / 2.0 - height / (2.0 * scale);
  }

  Rng job_rng(seed);
  JobSamples job_samples;
  if (cfg.bg_intensity_scope == Scope::jobwise)
    job_samples.bg = sample_interval(job_rng, cfg.bg_intensity);
  if (cfg.part_intensity_scope == Scope::jobwise)
    job_samples.part = sample_interval(job_rng, cfg.part_intensity);
  if (cfg.position_jitter_scope == Scope::jobwise) {
    const double dx = sample_interval(job_rng, cfg.position_jitter);
    const double dy = sample_interval(job_rng, cfg.position_jitter);
    job_samples.jitter = {dx, dy};
  }
  if (cfg.translucency_alpha_scope == Scope::jobwise)
    job_samples.alpha = sample_interval(job_rng, cfg.translucency_alpha);
  if (cfg.contour_blur_sigma_scope == Scope::jobwise)
    job_samples.blur_sigma = sample_interval(job_rng, cfg.contour_blur_sigma);
  if (cfg.per_layer_noise_sigma_scope == Scope::jobwise)
    job_samples.noise_sigma = sample_interval(job_rng, cfg.per_layer_noise_sigma);

  JobResult result;
  result.images.reserve(stack.layers.size());
  result.records.reserve(stack.layers.size());

  const GrayImage* prev = nullptr;
  for (int l = 0; l < layer_count; ++l) {
    Rng layer_rng = job_rng.split(static_cast<std::uint64_t>(l));
    const LayerSample sample = sample_layer_params(cfg, layer_rng, &job_samples);
    FillResult fill =
        raster_fill(stack.layers[static_cast<std::size_t>(l)].contours, sample, prev, width,
                    height, scale, origin);
    result.clipped = result.clipped || fill.clipped;

    const DefectSpec* active = nullptr;
    for (const DefectSpec& spec : plan) {
      if (spec.cls == DefectClass::good) continue;
      if (l >= spec.layer_begin && l <= spec.layer_end) {
        active = &spec;
        break;
      }
    }

    ManifestRecord record;
    record.image_path = format_image_name(job_id, l);
    record.job_id = job_id;
    record.layer_index = l;
    record.seed = seed;

    GrayImage img = std::move(fill.image);
    if (active != nullptr) {
      InjectResult inj = inject_defect(img, *active, layer_rng, &fill.part_mask);
      img = std::move(inj.image);
      record.class_label = to_string(active->cls);
      record.defect_params = inj.params_json;
    } else {
      record.class_label = "good";
    }

    result.images.push_back(finish_layer(img, sample, layer_rng));
    prev = &result.images.back();
    result.records.push_back(std::move(record));
  }
  return result;
}

OcclusionResult apply_occlusion(const GrayImage& img, Rng& rng, double min_coverage) {
  if (img.width < 1 || img.height < 1) throw ValidationError("apply_occlusion: empty image");
  if (!(min_coverage > 0.0 && min_coverage <= 1.0))
    throw ValidationError("apply_occlusion: min_coverage must lie in (0, 1]");

  OcclusionResult out;
  out.coverage = min_coverage + rng.uniform01() * (1.0 - min_coverage);
  const int side = static_cast<int>(rng.below(4));  // 0 left, 1 right, 2 top, 3 bottom
  const double level = rng.uniform01() * 255.0;

  out.image = img;
  int x0 = 0, x1 = img.width, y0 = 0, y1 = img.height;
  if (side == 0) {
    x1 = std::max(1, static_cast<int>(std::floor(out.coverage * img.width + 0.5)));
  } else if (side == 1) {
    x0 = img.width - std::max(1, static_cast<int>(std::floor(out.coverage * img.width + 0.5)));
  } else if (side == 2) {
    y1 = std::max(1, static_cast<int>(std::floor(out.coverage * img.height + 0.5)));
  } else {
    y0 = img.height - std::max(1, static_cast<int>(std::floor(out.coverage * img.height + 0.5)));
  }
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      out.image.at(x, y) = clamp_round(level + rng.normal() * 2.0);
  return out;
}

DatasetManifest generate_type1_dataset(const std::vector<SliceStack>& stacks,
                                       const RandomisationConfig& cfg, std::uint64_t seed,
                                       std::size_t good_count, std::size_t occluded_count,
                                       const std::filesystem::path& out_dir, int width,
                                       int height, double scale) {
  if (stacks.empty()) throw ValidationError("generate_type1_dataset: no slice stacks");
  if (good_count == 0 || occluded_count == 0)
    throw ValidationError("generate_type1_dataset: both class counts must be positive");
  cfg.validate();

  Rng master(seed);
  std::vector<JobResult> results(stacks.size());
  parallel_for(stacks.size(), [&](std::size_t j) {
    const std::uint64_t job_seed = master.split(j).seed();
    results[j] = generate_job(stacks[j], cfg, job_seed, {}, width, height, scale,
                              static_cast<int>(j));
  });

  std::vector<std::pair<std::size_t, std::size_t>> pool;  // (job, layer)
  for (std::size_t j = 0; j < results.size(); ++j)
    for (std::size_t r = 0; r < results[j].records.size(); ++r) pool.push_back({j, r});
  if (pool.size() < good_count + occluded_count)
    throw ValidationError("generate_type1_dataset: stacks yield " + std::to_string(pool.size()) +
                          " layers, need " + std::to_string(good_count + occluded_count));

  Rng pick = master.split(0x0cc1ULL);
  for (std::size_t i = 0; i < good_count + occluded_count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(pick.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "'");

  DatasetManifest manifest;
  for (std::size_t j = 0; j < results.size(); ++j)
    if (results[j].clipped)
      manifest.warnings.push_back("job " + std::to_string(j) +
                                  ": contours clipped at the canvas edge");
  for (std::size_t i = 0; i < good_count + occluded_count; ++i) {
    const auto [j, r] = pool[i];
    ManifestRecord record = results[j].records[r];
    GrayImage image = results[j].images[r];
    if (i >= good_count) {
      Rng occ_rng = master.split(0x0cc10000ULL + i);
      OcclusionResult occ = apply_occlusion(image, occ_rng);
      image = std::move(occ.image);
      record.class_label = "occluded";
      nlohmann::ordered_json params{{"coverage", occ.coverage}};
      record.defect_params = params.dump();
    }
    save_image(image, out_dir / record.image_path);
    manifest.class_counts[record.class_label] += 1;
    manifest.records.push_back(std::move(record));
  }
  save_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

DatasetManifest generate_dataset(const std::vector<JobPlan>& jobs,
                                 const RandomisationConfig& cfg, std::uint64_t seed,
                                 std::size_t target_per_class,
                                 const std::filesystem::path& out_dir, int width, int height,
                                 double scale) {
  if (jobs.empty()) throw ValidationError("generate_dataset: no jobs");
  if (target_per_class == 0) throw ValidationError("generate_dataset: target_per_class is zero");
  cfg.validate();

  Rng master(seed);
  std::vector<JobResult> results(jobs.size());
  // Per-job streams come off split(), so the parallel schedule cannot change
  // any output byte.
  parallel_for(jobs.size(), [&](std::size_t j) {
    const std::uint64_t job_seed = master.split(j).seed();
    results[j] = generate_job(jobs[j].stack, cfg, job_seed, jobs[j].plan, width, height, scale,
                              static_cast<int>(j));
  });

  // Pool record indices per class in (job, layer) order.
  std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> by_class;
  for (std::size_t j = 0; j < results.size(); ++j)
    for (std::size_t r = 0; r < results[j].records.size(); ++r)
      by_class[results[j].records[r].class_label].push_back({j, r});

  for (DefectClass cls : all_defect_classes()) {
    const std::string label = to_string(cls);
    const std::size_t have = by_class.count(label) ? by_class[label].size() : 0;
    if (have < target_per_class)
      throw ValidationError("generate_dataset: insufficient images of class '" + label +
                            "': have " + std::to_string(have) + ", need " +
                            std::to_string(target_per_class));
  }

  // Uniformly subsample each class's surplus with a dedicated substream, then
  // restore (job, layer) order.
  std::vector<std::vector<char>> selected(results.size());
  for (std::size_t j = 0; j < results.size(); ++j)
    selected[j].assign(results[j].records.size(), 0);

  std::uint64_t class_tag = 0x5e1ec7ULL;
  for (DefectClass cls : all_defect_classes()) {
    auto& candidates = by_class[to_string(cls)];
    Rng pick = master.split(class_tag++);
    for (std::size_t i = 0; i < target_per_class; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(pick.below(candidates.size() - i));
      std::swap(candidates[i], candidates[j]);
    }
    for (std::size_t i = 0; i < target_per_class; ++i)
      selected[candidates[i].first][candidates[i].second] = 1;
  }

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "'");

  DatasetManifest manifest;
  for (std::size_t j = 0; j < results.size(); ++j)
    if (results[j].clipped)
      manifest.warnings.push_back("job " + std::to_string(j) +
                                  ": contours clipped at the canvas edge");
  for (std::size_t j = 0; j < results.size(); ++j) {
    for (std::size_t r = 0; r < results[j].records.size(); ++r) {
      if (!selected[j][r]) continue;
      const ManifestRecord& record = results[j].records[r];
      save_image(results[j].images[r], out_dir / record.image_path);
      manifest.class_counts[record.class_label] += 1;
      manifest.records.push_back(record);
    }
  }
  save_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

// ---------------------------------------------------------------------------
// Manifest serialization

std::string manifest_to_jsonl(const DatasetManifest& manifest) {
  std::ostringstream out;
  for (const ManifestRecord& r : manifest.records) {
    nlohmann::ordered_json j;
    j["image_path"] = r.image_path;
    j["job_id"] = r.job_id;
    j["layer_index"] = r.layer_index;
    j["class_label"] = r.class_label;
    j["seed"] = r.seed;
    j["defect_params"] = nlohmann::json::parse(r.defect_params);
    out << j.dump() << "\n";
  }
  return out.str();
}

DatasetManifest manifest_from_jsonl(const std::string& text) {
  DatasetManifest manifest;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("manifest line " + std::to_string(lineno) + " is not valid JSON: " +
                            e.what());
    }
    ManifestRecord r;
    try {
      r.image_path = j.at("image_path").get<std::string>();
      r.job_id = j.at("job_id").get<int>();
      r.layer_index = j.at("layer_index").get<int>();
      r.class_label = j.at("class_label").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.defect_params = j.at("defect_params").dump();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("manifest line " + std::to_string(lineno) +
                            " missing required field: " + e.what());
    }
    manifest.class_counts[r.class_label] += 1;
    manifest.records.push_back(std::move(r));
  }

  std::vector<std::string> paths;
  paths.reserve(manifest.records.size());
  for (const ManifestRecord& r : manifest.records) paths.push_back(r.image_path);
  std::sort(paths.begin(), paths.end());
  if (std::adjacent_find(paths.begin(), paths.end()) != paths.end())
    throw ValidationError("manifest contains duplicate image paths");
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  detail::write_text_file(path, manifest_to_jsonl(manifest));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_jsonl(detail::read_text_file(path));
}

}  // namespace layermon
