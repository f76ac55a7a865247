#pragma once

#include <array>
#include <string>
#include <vector>

#include "layermon/image.hpp"

namespace layermon {

enum class WarpKind { translation, euclidean, affine };

std::string to_string(WarpKind kind);
WarpKind warp_kind_from_string(const std::string& s);

/// Parametric 2D warp. Parameter layout:
///   translation: [tx, ty]
///   euclidean:   [theta, tx, ty]
///   affine:      [a, b, c, d, tx, ty] with matrix [[1+a, b, tx], [c, 1+d, ty]]
/// The affine matrix must be orientation-preserving (positive determinant).
struct WarpParams {
  WarpKind kind = WarpKind::translation;
  std::vector<double> p;

  static WarpParams identity(WarpKind kind);
  static WarpParams from_matrix(WarpKind kind, const std::array<std::array<double, 3>, 2>& m);

  std::array<std::array<double, 3>, 2> matrix() const;
  int param_count() const { return static_cast<int>(p.size()); }

  /// (x, y) mapped through the warp matrix.
  Vec2px apply(double x, double y) const;

  std::string to_json() const;
  static WarpParams from_json(const std::string& text);
};

struct EccOptions {
  int max_iterations = 50;   // per pyramid level
  double epsilon = 1e-6;     // minimum coefficient improvement
  int pyramid_levels = 3;
};

struct AlignResult {
  WarpParams params;
  double coefficient = 0.0;
  /// Full-resolution interior ECC after each pyramid level, coarse to fine.
  std::vector<double> level_coefficients;
};

/// Normalized correlation of the zero-mean vectorised images, in [-1, 1].
double ecc_coefficient(const GrayImage& a, const GrayImage& b);
double ecc_coefficient(const FloatImage& a, const FloatImage& b);

/// Resamples img through the warp: out(x, y) = img(W(x, y)), bilinear,
/// zero outside.
GrayImage warp_image(const GrayImage& img, const WarpParams& w);
FloatImage warp_image(const FloatImage& img, const WarpParams& w);

/// Iterative enhanced-correlation-coefficient maximisation: finds warp
/// parameters p such that target(W(x; p)) matches the template, re-linearising
/// at the current parameters each iteration (forward additive) and proceeding
/// coarse-to-fine over an image pyramid. Scoring discards a 5% border so
/// zero-filled pixels do not bias the coefficient.
AlignResult ecc_align(const GrayImage& templ, const GrayImage& target, WarpKind kind,
                      const WarpParams& init, const EccOptions& opts = {});
AlignResult ecc_align(const GrayImage& templ, const GrayImage& target, WarpKind kind,
                      const EccOptions& opts = {});

/// Estimates one warp from (reference, source_same_layer) and applies it to
/// every image of the stack.
std::vector<GrayImage> register_job(const GrayImage& reference,
                                    const GrayImage& source_same_layer,
                                    const std::vector<GrayImage>& stack, WarpKind kind,
                                    const EccOptions& opts = {});

}  // namespace layermon
