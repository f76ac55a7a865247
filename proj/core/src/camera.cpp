#include "layermon/camera.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "layermon/errors.hpp"
#include "text_io.hpp"

namespace layermon {
namespace {

Eigen::Vector3d rotate(const std::array<double, 3>& rvec, const Eigen::Vector3d& p) {
  const Eigen::Vector3d r(rvec[0], rvec[1], rvec[2]);
  const double theta = r.norm();
  if (theta < 1e-15) return p;
  return Eigen::AngleAxisd(theta, r / theta) * p;
}

Eigen::Vector3d to_camera_frame(const Pose& pose, const std::array<double, 3>& p) {
  return rotate(pose.rotation, Eigen::Vector3d(p[0], p[1], p[2])) +
         Eigen::Vector3d(pose.translation[0], pose.translation[1], pose.translation[2]);
}

Vec2px apply_intrinsics(const CameraModel& model, double x, double y) {
  const double r2 = x * x + y * y;
  const double factor = 1.0 + model.k1 * r2 + model.k2 * r2 * r2;
  const double xd = x * factor;
  const double yd = y * factor;
  return {model.fx * xd + model.cx, model.fy * yd + model.cy};
}

}  // namespace

Vec2px project_point(const CameraModel& model, const Pose& pose,
                     const std::array<double, 3>& p) {
  const Eigen::Vector3d cam = to_camera_frame(pose, p);
  if (cam.z() <= 0.0) throw ValidationError("project_point: point has non-positive depth");
  return apply_intrinsics(model, cam.x() / cam.z(), cam.y() / cam.z());
}

Vec2px distort_norm(const CameraModel& model, const Vec2px& norm) {
  const double r2 = norm.x * norm.x + norm.y * norm.y;
  const double factor = 1.0 + model.k1 * r2 + model.k2 * r2 * r2;
  return {norm.x * factor, norm.y * factor};
}

Vec2px undistort_point(const CameraModel& model, const Vec2px& distorted_norm) {
  double x = distorted_norm.x;
  double y = distorted_norm.y;
  for (int i = 0; i < 20; ++i) {
    const double r2 = x * x + y * y;
    const double factor = 1.0 + model.k1 * r2 + model.k2 * r2 * r2;
    if (!(std::abs(factor) > 1e-12) || !std::isfinite(factor))
      throw NumericalError("undistort_point: distortion polynomial vanished");
    const double nx = distorted_norm.x / factor;
    const double ny = distorted_norm.y / factor;
    const double update = std::hypot(nx - x, ny - y);
    x = nx;
    y = ny;
    if (update < 1e-10) return {x, y};
  }
  throw NumericalError("undistort_point: fixed-point iteration did not converge");
}

GrayImage undistort_image(const GrayImage& img, const CameraModel& model) {
  if (model.fx <= 0.0 || model.fy <= 0.0)
    throw ValidationError("undistort_image: focal lengths must be positive");
  const FloatImage src = to_float(img);
  FloatImage out(img.width, img.height);
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      const Vec2px norm{(u - model.cx) / model.fx, (v - model.cy) / model.fy};
      const Vec2px d = distort_norm(model, norm);
      out.at(u, v) = bilinear_sample(src, model.fx * d.x + model.cx, model.fy * d.y + model.cy);
    }
  }
  return to_gray(out);
}

double reprojection_rms(const CameraModel& model, const std::vector<Pose>& poses,
                        const std::vector<CalibView>& views) {
  if (poses.size() != views.size())
    throw ValidationError("reprojection_rms: pose/view count mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    for (const Correspondence& c : views[v].correspondences) {
      const Vec2px proj = project_point(model, poses[v], c.object_point);
      const double du = proj.x - c.image_point.x;
      const double dv = proj.y - c.image_point.y;
      sum += du * du + dv * dv;
      ++n;
    }
  }
  if (n == 0) throw ValidationError("reprojection_rms: no correspondences");
  return std::sqrt(sum / static_cast<double>(n));
}

CalibView synth_checkerboard(const CameraModel& model, const Pose& pose, int rows, int cols,
                             double square_size) {
  if (rows < 2 || cols < 2 || !(square_size > 0.0))
    throw ValidationError("synth_checkerboard: need at least a 2x2 corner grid");
  CalibView view;
  view.correspondences.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Correspondence corr;
      corr.object_point = {c * square_size, r * square_size, 0.0};
      corr.image_point = project_point(model, pose, corr.object_point);
      view.correspondences.push_back(corr);
    }
  }
  return view;
}

// ---------------------------------------------------------------------------
// Calibration

namespace {

constexpr double kBadResidual = 1e6;

/// Projection for use inside the optimiser: transient negative-depth states
/// during line search yield a huge flat residual instead of throwing, so the
/// step is rejected rather than aborting the solve.
Vec2px project_guarded(const CameraModel& model, const Pose& pose,
                       const std::array<double, 3>& p) {
  const Eigen::Vector3d cam = to_camera_frame(pose, p);
  if (cam.z() <= 1e-12) return {kBadResidual, kBadResidual};
  return apply_intrinsics(model, cam.x() / cam.z(), cam.y() / cam.z());
}

struct ParamLayout {
  std::size_t view_count = 0;

  std::size_t total() const { return 6 + 6 * view_count; }
  std::size_t pose_offset(std::size_t v) const { return 6 + 6 * v; }
};

CameraModel model_from(const Eigen::VectorXd& p) {
  return CameraModel{p(0), p(1), p(2), p(3), p(4), p(5)};
}

Pose pose_from(const Eigen::VectorXd& p, std::size_t offset) {
  Pose pose;
  pose.rotation = {p(static_cast<Eigen::Index>(offset)), p(static_cast<Eigen::Index>(offset + 1)),
                   p(static_cast<Eigen::Index>(offset + 2))};
  pose.translation = {p(static_cast<Eigen::Index>(offset + 3)),
                      p(static_cast<Eigen::Index>(offset + 4)),
                      p(static_cast<Eigen::Index>(offset + 5))};
  return pose;
}

void view_residuals(const Eigen::VectorXd& p, const ParamLayout& layout,
                    const std::vector<CalibView>& views, std::size_t v, double* out) {
  const CameraModel model = model_from(p);
  const Pose pose = pose_from(p, layout.pose_offset(v));
  std::size_t i = 0;
  for (const Correspondence& c : views[v].correspondences) {
    const Vec2px proj = project_guarded(model, pose, c.object_point);
    out[i++] = proj.x - c.image_point.x;
    out[i++] = proj.y - c.image_point.y;
  }
}

Eigen::VectorXd residuals(const Eigen::VectorXd& p, const ParamLayout& layout,
                          const std::vector<CalibView>& views,
                          const std::vector<std::size_t>& row_offsets, std::size_t rows) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(rows));
  for (std::size_t v = 0; v < views.size(); ++v)
    view_residuals(p, layout, views, v, r.data() + row_offsets[v]);
  return r;
}

/// Planar homography board -> image by the normalized DLT.
Eigen::Matrix3d fit_homography(const CalibView& view) {
  const std::size_t n = view.correspondences.size();

  Eigen::Vector2d obj_mean = Eigen::Vector2d::Zero();
  Eigen::Vector2d img_mean = Eigen::Vector2d::Zero();
  for (const Correspondence& c : view.correspondences) {
    obj_mean += Eigen::Vector2d(c.object_point[0], c.object_point[1]);
    img_mean += Eigen::Vector2d(c.image_point.x, c.image_point.y);
  }
  obj_mean /= static_cast<double>(n);
  img_mean /= static_cast<double>(n);

  double obj_dist = 0.0, img_dist = 0.0;
  for (const Correspondence& c : view.correspondences) {
    obj_dist += (Eigen::Vector2d(c.object_point[0], c.object_point[1]) - obj_mean).norm();
    img_dist += (Eigen::Vector2d(c.image_point.x, c.image_point.y) - img_mean).norm();
  }
  obj_dist /= static_cast<double>(n);
  img_dist /= static_cast<double>(n);
  if (obj_dist < 1e-12 || img_dist < 1e-12)
    throw NumericalError("calibrate: degenerate (coincident) correspondences in a view");

  const double so = std::sqrt(2.0) / obj_dist;
  const double si = std::sqrt(2.0) / img_dist;
  Eigen::Matrix3d t_obj, t_img;
  t_obj << so, 0, -so * obj_mean.x(), 0, so, -so * obj_mean.y(), 0, 0, 1;
  t_img << si, 0, -si * img_mean.x(), 0, si, -si * img_mean.y(), 0, 0, 1;

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Correspondence& c = view.correspondences[i];
    const double x = so * (c.object_point[0] - obj_mean.x());
    const double y = so * (c.object_point[1] - obj_mean.y());
    const double u = si * (c.image_point.x - img_mean.x());
    const double v = si * (c.image_point.y - img_mean.y());
    a.row(static_cast<Eigen::Index>(2 * i)) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(static_cast<Eigen::Index>(2 * i + 1)) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }

  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);

  Eigen::Matrix3d hom = t_img.inverse() * hn * t_obj;
  if (!hom.allFinite() || std::abs(hom(2, 2)) < 1e-15)
    throw NumericalError("calibrate: homography estimation failed for a view");
  return hom / hom(2, 2);
}

Pose pose_from_homography(const Eigen::Matrix3d& hom, const CameraModel& model) {
  Eigen::Matrix3d k;
  k << model.fx, 0, model.cx, 0, model.fy, model.cy, 0, 0, 1;
  Eigen::Matrix3d b = k.inverse() * hom;

  const double scale = 2.0 / (b.col(0).norm() + b.col(1).norm());
  if (!std::isfinite(scale)) throw NumericalError("calibrate: degenerate homography scale");
  Eigen::Vector3d r1 = scale * b.col(0);
  Eigen::Vector3d r2 = scale * b.col(1);
  Eigen::Vector3d t = scale * b.col(2);
  if (t.z() < 0.0) {
    r1 = -r1;
    r2 = -r2;
    t = -t;
  }

  Eigen::Matrix3d rot;
  rot.col(0) = r1;
  rot.col(1) = r2;
  rot.col(2) = r1.cross(r2);
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(rot, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1.0;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }

  const Eigen::AngleAxisd aa(r);
  const Eigen::Vector3d rvec = aa.angle() * aa.axis();
  Pose pose;
  pose.rotation = {rvec.x(), rvec.y(), rvec.z()};
  pose.translation = {t.x(), t.y(), t.z()};
  return pose;
}

}  // namespace

CalibResult calibrate(const std::vector<CalibView>& views, const CalibOptions& opts) {
  if (views.size() < 3)
    throw ValidationError("calibrate: need at least 3 views, got " +
                          std::to_string(views.size()));
  std::size_t total_points = 0;
  for (const CalibView& view : views) {
    if (view.correspondences.size() < 6)
      throw ValidationError("calibrate: each view needs at least 6 correspondences");
    for (const Correspondence& c : view.correspondences) {
      for (double coord : c.object_point)
        if (!std::isfinite(coord)) throw ValidationError("calibrate: non-finite object point");
      if (!std::isfinite(c.image_point.x) || !std::isfinite(c.image_point.y))
        throw ValidationError("calibrate: non-finite image point");
    }
    total_points += view.correspondences.size();
  }

  const ParamLayout layout{views.size()};
  const std::size_t rows = 2 * total_points;
  std::vector<std::size_t> row_offsets(views.size());
  {
    std::size_t off = 0;
    for (std::size_t v = 0; v < views.size(); ++v) {
      row_offsets[v] = off;
      off += 2 * views[v].correspondences.size();
    }
  }

  // Initial guess.
  CameraModel init;
  if (opts.image_width > 0 && opts.image_height > 0) {
    init.fx = init.fy = static_cast<double>(opts.image_width);
    init.cx = opts.image_width / 2.0;
    init.cy = opts.image_height / 2.0;
  } else {
    init.fx = init.fy = 600.0;
    double sx = 0.0, sy = 0.0;
    for (const CalibView& view : views)
      for (const Correspondence& c : view.correspondences) {
        sx += c.image_point.x;
        sy += c.image_point.y;
      }
    init.cx = sx / static_cast<double>(total_points);
    init.cy = sy / static_cast<double>(total_points);
  }

  Eigen::VectorXd p(static_cast<Eigen::Index>(layout.total()));
  p(0) = init.fx;
  p(1) = init.fy;
  p(2) = init.cx;
  p(3) = init.cy;
  p(4) = 0.0;
  p(5) = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const Pose pose = pose_from_homography(fit_homography(views[v]), init);
    const std::size_t off = layout.pose_offset(v);
    for (int i = 0; i < 3; ++i) {
      p(static_cast<Eigen::Index>(off + i)) = pose.rotation[static_cast<std::size_t>(i)];
      p(static_cast<Eigen::Index>(off + 3 + i)) = pose.translation[static_cast<std::size_t>(i)];
    }
  }

  Eigen::VectorXd r = residuals(p, layout, views, row_offsets, rows);
  double cost = r.squaredNorm();

  CalibResult result;
  result.cost_history.push_back(cost);

  const std::size_t np = layout.total();
  double lambda = 1e-3;
  bool converged = false;

  for (int iter = 0; iter < opts.max_iterations && !converged; ++iter) {
    // Numeric Jacobian, central differences. Pose columns only touch their
    // own view's rows; intrinsic columns touch everything.
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows),
                                                static_cast<Eigen::Index>(np));
    for (std::size_t col = 0; col < np; ++col) {
      const double h = 1e-6 * std::max(1.0, std::abs(p(static_cast<Eigen::Index>(col))));
      Eigen::VectorXd pp = p, pm = p;
      pp(static_cast<Eigen::Index>(col)) += h;
      pm(static_cast<Eigen::Index>(col)) -= h;
      if (col < 6) {
        const Eigen::VectorXd rp = residuals(pp, layout, views, row_offsets, rows);
        const Eigen::VectorXd rm = residuals(pm, layout, views, row_offsets, rows);
        jac.col(static_cast<Eigen::Index>(col)) = (rp - rm) / (2.0 * h);
      } else {
        const std::size_t v = (col - 6) / 6;
        const std::size_t nrows = 2 * views[v].correspondences.size();
        std::vector<double> rp(nrows), rm(nrows);
        view_residuals(pp, layout, views, v, rp.data());
        view_residuals(pm, layout, views, v, rm.data());
        for (std::size_t i = 0; i < nrows; ++i)
          jac(static_cast<Eigen::Index>(row_offsets[v] + i), static_cast<Eigen::Index>(col)) =
              (rp[i] - rm[i]) / (2.0 * h);
      }
    }

    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd g = jac.transpose() * r;

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd damped = jtj;
      for (std::size_t i = 0; i < np; ++i) {
        const Eigen::Index d = static_cast<Eigen::Index>(i);
        damped(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      }
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      if (ldlt.info() != Eigen::Success)
        throw NumericalError("calibrate: singular normal equations");
      const Eigen::VectorXd delta = ldlt.solve(-g);
      if (!delta.allFinite()) throw NumericalError("calibrate: singular normal equations");

      const Eigen::VectorXd p_new = p + delta;
      const Eigen::VectorXd r_new = residuals(p_new, layout, views, row_offsets, rows);
      const double cost_new = r_new.squaredNorm();

      if (cost_new < cost) {
        const double drop = cost - cost_new;
        p = p_new;
        r = r_new;
        cost = cost_new;
        result.cost_history.push_back(cost);
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        if (drop < 1e-12 * std::max(cost, 1e-300)) converged = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e14) {
          // Damping exhausted: no descent direction improves the cost, so the
          // iterate is already at the achievable minimum.
          converged = true;
          accepted = true;
        }
      }
    }
  }

  if (!converged)
    throw NumericalError("calibrate: no convergence in " + std::to_string(opts.max_iterations) +
                         " iterations");

  result.model = model_from(p);
  if (result.model.fx <= 0.0 || result.model.fy <= 0.0)
    throw NumericalError("calibrate: converged to non-positive focal length");
  result.poses.resize(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) result.poses[v] = pose_from(p, layout.pose_offset(v));
  result.rms = std::sqrt(cost / static_cast<double>(total_points));
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

std::vector<CalibView> parse_correspondences(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("correspondence file is not valid JSON: ") + e.what());
  }
  if (!j.is_array()) throw ValidationError("correspondence file must be a JSON array of views");
  std::vector<CalibView> views;
  for (const auto& jview : j) {
    if (!jview.is_array()) throw ValidationError("each view must be an array of correspondences");
    CalibView view;
    for (const auto& jc : jview) {
      const auto& obj = jc.at("object");
      const auto& img = jc.at("image");
      if (obj.size() != 3 || img.size() != 2)
        throw ValidationError("correspondence needs object:[x,y,z] and image:[u,v]");
      Correspondence c;
      c.object_point = {obj[0].get<double>(), obj[1].get<double>(), obj[2].get<double>()};
      c.image_point = {img[0].get<double>(), img[1].get<double>()};
      view.correspondences.push_back(c);
    }
    views.push_back(std::move(view));
  }
  return views;
}

std::vector<CalibView> load_correspondences(const std::filesystem::path& path) {
  return parse_correspondences(detail::read_text_file(path));
}

std::string calib_result_to_json(const CalibResult& result) {
  nlohmann::ordered_json j;
  j["fx"] = result.model.fx;
  j["fy"] = result.model.fy;
  j["cx"] = result.model.cx;
  j["cy"] = result.model.cy;
  j["k1"] = result.model.k1;
  j["k2"] = result.model.k2;
  j["rms"] = result.rms;
  return j.dump(2) + "\n";
}

void save_calib_result(const CalibResult& result, const std::filesystem::path& path) {
  detail::write_text_file(path, calib_result_to_json(result));
}

CameraModel camera_model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("camera file is not valid JSON: ") + e.what());
  }
  CameraModel model;
  try {
    model.fx = j.at("fx").get<double>();
    model.fy = j.at("fy").get<double>();
    model.cx = j.at("cx").get<double>();
    model.cy = j.at("cy").get<double>();
    model.k1 = j.at("k1").get<double>();
    model.k2 = j.at("k2").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("camera file missing required key: ") + e.what());
  }
  for (double v : {model.fx, model.fy, model.cx, model.cy, model.k1, model.k2})
    if (!std::isfinite(v)) throw ValidationError("camera file contains non-finite values");
  if (model.fx <= 0.0 || model.fy <= 0.0)
    throw ValidationError("camera file: focal lengths must be positive");
  return model;
}

CameraModel load_camera_model(const std::filesystem::path& path) {
  return camera_model_from_json(detail::read_text_file(path));
}

}  // namespace layermon
