#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "layermon/image.hpp"

namespace layermon {

/// Pinhole intrinsics with two radial distortion terms. Tangential distortion
/// is deliberately not modelled; the wide-angle lens in the rig is dominated
/// by barrel distortion.
struct CameraModel {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
};

/// Extrinsics of one board view: axis-angle rotation plus translation,
/// camera frame = R * board + t.
struct Pose {
  std::array<double, 3> rotation{};
  std::array<double, 3> translation{};
};

struct Correspondence {
  std::array<double, 3> object_point{};  // board coordinates, z = 0 on the board
  Vec2px image_point;
};

struct CalibView {
  std::vector<Correspondence> correspondences;
};

struct CalibResult {
  CameraModel model;
  std::vector<Pose> poses;
  double rms = 0.0;
  std::vector<double> cost_history;  // accepted objective values, non-increasing
};

struct CalibOptions {
  // When the sensor size is known the focal guess is the image width and the
  // principal point starts at the center; otherwise 600 px and the centroid
  // of the observations.
  int image_width = 0;
  int image_height = 0;
  int max_iterations = 200;
};

/// Pinhole projection with radial distortion. Throws ValidationError if the
/// point lands at non-positive depth in the camera frame.
Vec2px project_point(const CameraModel& model, const Pose& pose,
                     const std::array<double, 3>& p);

/// Applies the distortion polynomial to normalized coordinates.
Vec2px distort_norm(const CameraModel& model, const Vec2px& norm);

/// Inverts the distortion polynomial by fixed-point iteration (at most 20
/// rounds, stops when the update falls below 1e-10). Throws NumericalError
/// when the iteration fails to settle.
Vec2px undistort_point(const CameraModel& model, const Vec2px& distorted_norm);

/// Joint Levenberg-Marquardt estimate of intrinsics and per-view poses from
/// planar-board correspondences.
CalibResult calibrate(const std::vector<CalibView>& views, const CalibOptions& opts = {});

/// Inverse-mapping undistortion: each output pixel samples the source at its
/// distorted location (bilinear); samples outside the source read as 0.
GrayImage undistort_image(const GrayImage& img, const CameraModel& model);

double reprojection_rms(const CameraModel& model, const std::vector<Pose>& poses,
                        const std::vector<CalibView>& views);

/// Synthesises a rows x cols corner grid on the board plane and projects it;
/// stands in for corner detection on photographs.
CalibView synth_checkerboard(const CameraModel& model, const Pose& pose, int rows, int cols,
                             double square_size);

std::vector<CalibView> parse_correspondences(const std::string& text);
std::vector<CalibView> load_correspondences(const std::filesystem::path& path);

std::string calib_result_to_json(const CalibResult& result);
void save_calib_result(const CalibResult& result, const std::filesystem::path& path);

/// Reads {fx, fy, cx, cy, k1, k2} (extra keys such as rms are ignored).
/// Throws ValidationError for missing keys or non-positive focal lengths.
CameraModel camera_model_from_json(const std::string& text);
CameraModel load_camera_model(const std::filesystem::path& path);

}  // namespace layermon
