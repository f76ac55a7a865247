#include "layermon/registration.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "layermon/errors.hpp"
#include "layermon/parallel.hpp"

namespace layermon {

std::string to_string(WarpKind kind) {
  switch (kind) {
    case WarpKind::translation: return "translation";
    case WarpKind::euclidean: return "euclidean";
    case WarpKind::affine: return "affine";
  }
  return "?";
}

WarpKind warp_kind_from_string(const std::string& s) {
  if (s == "translation") return WarpKind::translation;
  if (s == "euclidean") return WarpKind::euclidean;
  if (s == "affine") return WarpKind::affine;
  throw ValidationError("unknown warp kind '" + s + "'");
}

namespace {
int params_for(WarpKind kind) {
  switch (kind) {
    case WarpKind::translation: return 2;
    case WarpKind::euclidean: return 3;
    case WarpKind::affine: return 6;
  }
  return 0;
}
}  // namespace

WarpParams WarpParams::identity(WarpKind kind) {
  WarpParams w;
  w.kind = kind;
  w.p.assign(static_cast<std::size_t>(params_for(kind)), 0.0);
  return w;
}

std::array<std::array<double, 3>, 2> WarpParams::matrix() const {
  if (static_cast<int>(p.size()) != params_for(kind))
    throw ValidationError("warp parameter count does not match kind");
  switch (kind) {
    case WarpKind::translation:
      return {{{1.0, 0.0, p[0]}, {0.0, 1.0, p[1]}}};
    case WarpKind::euclidean: {
      const double c = std::cos(p[0]);
      const double s = std::sin(p[0]);
      return {{{c, -s, p[1]}, {s, c, p[2]}}};
    }
    case WarpKind::affine:
      return {{{1.0 + p[0], p[1], p[4]}, {p[2], 1.0 + p[3], p[5]}}};
  }
  throw ValidationError("bad warp kind");
}

WarpParams WarpParams::from_matrix(WarpKind kind, const std::array<std::array<double, 3>, 2>& m) {
  WarpParams w;
  w.kind = kind;
  switch (kind) {
    case WarpKind::translation:
      w.p = {m[0][2], m[1][2]};
      break;
    case WarpKind::euclidean: {
      // Rotation block must be orthonormal.
      const double det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
      const double n0 = std::hypot(m[0][0], m[1][0]);
      const double n1 = std::hypot(m[0][1], m[1][1]);
      if (std::abs(det - 1.0) > 1e-6 || std::abs(n0 - 1.0) > 1e-6 || std::abs(n1 - 1.0) > 1e-6)
        throw ValidationError("euclidean warp matrix is not a rotation");
      w.p = {std::atan2(m[1][0], m[0][0]), m[0][2], m[1][2]};
      break;
    }
    case WarpKind::affine: {
      const double det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
      if (det <= 0.0) throw ValidationError("affine warp matrix must have positive determinant");
      w.p = {m[0][0] - 1.0, m[0][1], m[1][0], m[1][1] - 1.0, m[0][2], m[1][2]};
      break;
    }
  }
  return w;
}

Vec2px WarpParams::apply(double x, double y) const {
  const auto m = matrix();
  return {m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2]};
}

std::string WarpParams::to_json() const {
  const auto m = matrix();
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["matrix"] = {{m[0][0], m[0][1], m[0][2]}, {m[1][0], m[1][1], m[1][2]}};
  return j.dump(2);
}

WarpParams WarpParams::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  const WarpKind kind = warp_kind_from_string(j.at("kind").get<std::string>());
  const auto rows = j.at("matrix");
  if (rows.size() != 2 || rows[0].size() != 3 || rows[1].size() != 3)
    throw ValidationError("warp matrix must be 2x3");
  std::array<std::array<double, 3>, 2> m{};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c)
      m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = rows[r][c].get<double>();
  return from_matrix(kind, m);
}

namespace {

struct ZeroMean {
  std::vector<double> values;  // zero-mean, ROI order
  double norm = 0.0;
};

struct Roi {
  int x0, y0, x1, y1;  // half-open

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  std::size_t count() const { return static_cast<std::size_t>(width()) * height(); }
};

Roi interior_roi(int w, int h) {
  const int bx = std::max(1, static_cast<int>(std::lround(0.05 * w)));
  const int by = std::max(1, static_cast<int>(std::lround(0.05 * h)));
  return Roi{bx, by, w - bx, h - by};
}

ZeroMean zero_mean(const FloatImage& img, const Roi& roi) {
  ZeroMean out;
  out.values.reserve(roi.count());
  double sum = 0.0;
  for (int y = roi.y0; y < roi.y1; ++y)
    for (int x = roi.x0; x < roi.x1; ++x) sum += img.at(x, y);
  const double mean = sum / static_cast<double>(roi.count());
  double norm2 = 0.0;
  for (int y = roi.y0; y < roi.y1; ++y)
    for (int x = roi.x0; x < roi.x1; ++x) {
      const double v = img.at(x, y) - mean;
      out.values.push_back(v);
      norm2 += v * v;
    }
  out.norm = std::sqrt(norm2);
  return out;
}

FloatImage downsample2(const FloatImage& img) {
  FloatImage out(img.width / 2, img.height / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(x, y) = 0.25 * (img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) +
                             img.at(2 * x, 2 * y + 1) + img.at(2 * x + 1, 2 * y + 1));
  return out;
}

void gradients(const FloatImage& img, FloatImage& gx, FloatImage& gy) {
  // Central differences on a lightly smoothed copy; raw 8-bit steps are too
  // quantised to drive the update stably.
  const FloatImage s = gaussian_blur(img, 0.5);
  gx = FloatImage(img.width, img.height);
  gy = FloatImage(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int xm = std::max(0, x - 1), xp = std::min(img.width - 1, x + 1);
      const int ym = std::max(0, y - 1), yp = std::min(img.height - 1, y + 1);
      gx.at(x, y) = 0.5 * (s.at(xp, y) - s.at(xm, y));
      gy.at(x, y) = 0.5 * (s.at(x, yp) - s.at(x, ym));
    }
  }
}

void scale_translation(WarpParams& w, double factor) {
  switch (w.kind) {
    case WarpKind::translation:
      w.p[0] *= factor;
      w.p[1] *= factor;
      break;
    case WarpKind::euclidean:
      w.p[1] *= factor;
      w.p[2] *= factor;
      break;
    case WarpKind::affine:
      w.p[4] *= factor;
      w.p[5] *= factor;
      break;
  }
}

/// One row of the Jacobian d(warp)/d(params) contracted with the warped image
/// gradient at template pixel (x, y).
void jacobian_row(WarpKind kind, const std::vector<double>& p, double x, double y, double gx,
                  double gy, double* row) {
  switch (kind) {
    case WarpKind::translation:
      row[0] = gx;
      row[1] = gy;
      break;
    case WarpKind::euclidean: {
      const double c = std::cos(p[0]);
      const double s = std::sin(p[0]);
      row[0] = gx * (-s * x - c * y) + gy * (c * x - s * y);
      row[1] = gx;
      row[2] = gy;
      break;
    }
    case WarpKind::affine:
      row[0] = gx * x;
      row[1] = gx * y;
      row[2] = gy * x;
      row[3] = gy * y;
      row[4] = gx;
      row[5] = gy;
      break;
  }
}

double ecc_full_resolution(const FloatImage& templ, const FloatImage& target,
                           const WarpParams& params) {
  const FloatImage warped = warp_image(target, params);
  const Roi roi = interior_roi(templ.width, templ.height);
  const ZeroMean t = zero_mean(templ, roi);
  const ZeroMean w = zero_mean(warped, roi);
  if (t.norm == 0.0 || w.norm == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < t.values.size(); ++i) dot += t.values[i] * w.values[i];
  return dot / (t.norm * w.norm);
}

}  // namespace

double ecc_coefficient(const FloatImage& a, const FloatImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw ValidationError("ecc_coefficient requires equal image dimensions");
  const Roi full{0, 0, a.width, a.height};
  const ZeroMean za = zero_mean(a, full);
  const ZeroMean zb = zero_mean(b, full);
  if (za.norm == 0.0 || zb.norm == 0.0)
    throw ValidationError("ecc_coefficient undefined for a constant image");
  double dot = 0.0;
  for (std::size_t i = 0; i < za.values.size(); ++i) dot += za.values[i] * zb.values[i];
  return dot / (za.norm * zb.norm);
}

double ecc_coefficient(const GrayImage& a, const GrayImage& b) {
  return ecc_coefficient(to_float(a), to_float(b));
}

FloatImage warp_image(const FloatImage& img, const WarpParams& w) {
  const auto m = w.matrix();
  if (w.kind == WarpKind::affine) {
    const double det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if (det <= 0.0) throw ValidationError("affine warp matrix must have positive determinant");
  }
  FloatImage out(img.width, img.height);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const double sx = m[0][0] * x + m[0][1] * y + m[0][2];
      const double sy = m[1][0] * x + m[1][1] * y + m[1][2];
      out.at(x, y) = bilinear_sample(img, sx, sy);
    }
  }
  return out;
}

GrayImage warp_image(const GrayImage& img, const WarpParams& w) {
  return to_gray(warp_image(to_float(img), w));
}

AlignResult ecc_align(const GrayImage& templ, const GrayImage& target, WarpKind kind,
                      const EccOptions& opts) {
  return ecc_align(templ, target, kind, WarpParams::identity(kind), opts);
}

AlignResult ecc_align(const GrayImage& templ, const GrayImage& target, WarpKind kind,
                      const WarpParams& init, const EccOptions& opts) {
  if (templ.width != target.width || templ.height != target.height)
    throw ValidationError("ecc_align requires equal image dimensions");
  if (opts.max_iterations < 1 || opts.pyramid_levels < 1 || !(opts.epsilon > 0.0))
    throw ValidationError("invalid ECC options");
  if (init.kind != kind || init.param_count() != params_for(kind))
    throw ValidationError("ecc_align init parameters do not match warp kind");

  const FloatImage templ_full = to_float(templ);
  const FloatImage target_full = to_float(target);

  // Pyramid, index 0 = full resolution. Stop before any side drops below 32 px.
  std::vector<FloatImage> templ_pyr{templ_full};
  std::vector<FloatImage> target_pyr{target_full};
  for (int l = 1; l < opts.pyramid_levels; ++l) {
    const FloatImage& prev = templ_pyr.back();
    if (prev.width / 2 < 32 || prev.height / 2 < 32) break;
    templ_pyr.push_back(downsample2(prev));
    target_pyr.push_back(downsample2(target_pyr.back()));
  }
  const int levels = static_cast<int>(templ_pyr.size());

  const int k = params_for(kind);
  WarpParams params = init;
  scale_translation(params, std::pow(0.5, levels - 1));

  AlignResult result;
  result.params = params;

  for (int level = levels - 1; level >= 0; --level) {
    const FloatImage& t_img = templ_pyr[static_cast<std::size_t>(level)];
    const FloatImage& s_img = target_pyr[static_cast<std::size_t>(level)];
    const Roi roi = interior_roi(t_img.width, t_img.height);
    const ZeroMean t_zm = zero_mean(t_img, roi);
    if (t_zm.norm == 0.0) throw ValidationError("ecc_align template has zero variance");

    FloatImage gx, gy;
    gradients(s_img, gx, gy);

    double best_rho = -2.0;
    WarpParams best_params = params;
    double last_rho = -2.0;

    for (int iter = 0; iter < opts.max_iterations; ++iter) {
      const FloatImage warped = warp_image(s_img, params);
      const FloatImage wgx = warp_image(gx, params);
      const FloatImage wgy = warp_image(gy, params);

      const ZeroMean w_zm = zero_mean(warped, roi);
      if (w_zm.norm == 0.0)
        throw NumericalError("ecc_align: warped image has zero variance (out of overlap)");

      double correlation = 0.0;
      for (std::size_t i = 0; i < t_zm.values.size(); ++i)
        correlation += t_zm.values[i] * w_zm.values[i];
      const double rho = correlation / (t_zm.norm * w_zm.norm);

      if (rho > best_rho) {
        best_rho = rho;
        best_params = params;
      }
      if (iter > 0 && std::abs(rho - last_rho) < opts.epsilon) break;
      last_rho = rho;

      // Build Gᵀ·G, Gᵀ·w̄ and Gᵀ·t̄ in one pass over the ROI.
      Eigen::MatrixXd hessian = Eigen::MatrixXd::Zero(k, k);
      Eigen::VectorXd img_proj = Eigen::VectorXd::Zero(k);
      Eigen::VectorXd templ_proj = Eigen::VectorXd::Zero(k);
      std::vector<double> row(static_cast<std::size_t>(k));
      std::size_t idx = 0;
      for (int y = roi.y0; y < roi.y1; ++y) {
        for (int x = roi.x0; x < roi.x1; ++x, ++idx) {
          jacobian_row(kind, params.p, x, y, wgx.at(x, y), wgy.at(x, y), row.data());
          for (int a = 0; a < k; ++a) {
            for (int b = a; b < k; ++b)
              hessian(a, b) += row[static_cast<std::size_t>(a)] * row[static_cast<std::size_t>(b)];
            img_proj(a) += row[static_cast<std::size_t>(a)] * w_zm.values[idx];
            templ_proj(a) += row[static_cast<std::size_t>(a)] * t_zm.values[idx];
          }
        }
      }
      for (int a = 0; a < k; ++a)
        for (int b = 0; b < a; ++b) hessian(a, b) = hessian(b, a);

      Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
      if (ldlt.info() != Eigen::Success)
        throw NumericalError("ecc_align: singular update system");
      const Eigen::VectorXd hinv_img = ldlt.solve(img_proj);

      const double lambda_num = w_zm.norm * w_zm.norm - img_proj.dot(hinv_img);
      const double lambda_den = correlation - templ_proj.dot(hinv_img);
      if (lambda_den <= 0.0)
        throw NumericalError(
            "ecc_align: update direction lost (images may be uncorrelated or non-overlapping)");
      const double lambda = lambda_num / lambda_den;

      // error vector e = lambda * t̄ - w̄, projected onto the Jacobian.
      Eigen::VectorXd err_proj = lambda * templ_proj - img_proj;
      const Eigen::VectorXd delta = ldlt.solve(err_proj);
      if (!delta.allFinite()) throw NumericalError("ecc_align: non-finite update");

      for (int a = 0; a < k; ++a) params.p[static_cast<std::size_t>(a)] += delta(a);
    }

    if (best_rho < 0.0)
      throw NumericalError("ecc_align diverged: best coefficient negative at pyramid level " +
                           std::to_string(level));
    params = best_params;

    // Score this level's result at full resolution so the coarse-to-fine
    // progress is comparable across levels.
    WarpParams full_params = params;
    scale_translation(full_params, std::pow(2.0, level));
    result.level_coefficients.push_back(ecc_full_resolution(templ_full, target_full, full_params));

    if (level > 0) scale_translation(params, 2.0);
  }

  result.params = params;
  result.coefficient = result.level_coefficients.back();
  return result;
}

std::vector<GrayImage> register_job(const GrayImage& reference, const GrayImage& source_same_layer,
                                    const std::vector<GrayImage>& stack, WarpKind kind,
                                    const EccOptions& opts) {
  for (const auto& img : stack)
    if (img.width != source_same_layer.width || img.height != source_same_layer.height)
      throw ValidationError("register_job: stack image dimensions differ from source image");

  const AlignResult aligned = ecc_align(reference, source_same_layer, kind, opts);

  std::vector<GrayImage> out(stack.size());
  parallel_for(stack.size(), [&](std::size_t i) { out[i] = warp_image(stack[i], aligned.params); });
  return out;
}

}  // namespace layermon
