#include "ppfpose/scene_prep.hpp"

#include <algorithm>
#include <cmath>

namespace ppfpose {

namespace {
// Share of the lowest valid depths treated as sensor undershoot.
constexpr double kLowDepthDiscard = 0.05;
}  // namespace

bool BBox2D::valid() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) && w > 0.0 && h > 0.0;
}

void BBox2D::validate() const {
  if (!valid()) throw ScenePrepError("bounding box needs finite fields and w > 0, h > 0");
}

BBox2D BBox2D::clamped(int width, int height) const {
  const double x0 = std::clamp(x, 0.0, static_cast<double>(width));
  const double y0 = std::clamp(y, 0.0, static_cast<double>(height));
  const double x1 = std::clamp(x + w, 0.0, static_cast<double>(width));
  const double y1 = std::clamp(y + h, 0.0, static_cast<double>(height));
  return {x0, y0, x1 - x0, y1 - y0};
}

double bbox_diag(const BBox2D& b) {
  b.validate();
  return std::hypot(b.w, b.h);
}

PixelRegion sampling_region(const BBox2D& b, int width, int height) {
  const double half = bbox_diag(b) / 2.0;
  const auto c = b.center();
  PixelRegion r;
  r.x0 = std::clamp(static_cast<int>(std::ceil(c.x() - half)), 0, width);
  r.y0 = std::clamp(static_cast<int>(std::ceil(c.y() - half)), 0, height);
  r.x1 = std::clamp(static_cast<int>(std::floor(c.x() + half)) + 1, 0, width);
  r.y1 = std::clamp(static_cast<int>(std::floor(c.y() + half)) + 1, 0, height);
  return r;
}

double zmin_in_region(const DepthImage& depth, const BBox2D& b) {
  const PixelRegion r = sampling_region(b, depth.width, depth.height);
  std::vector<double> vals;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x)
      if (depth.valid(x, y)) vals.push_back(depth.at(x, y));
  if (vals.empty()) throw NoDepthError("no valid depth inside the sampling region");

  const auto drop = static_cast<size_t>(std::floor(kLowDepthDiscard * static_cast<double>(vals.size())));
  std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(drop), vals.end());
  double z = vals[drop];

  // The centre pixel is never discarded: the result must not exceed it.
  const auto c = b.center();
  const int cx = static_cast<int>(std::lround(c.x())), cy = static_cast<int>(std::lround(c.y()));
  if (cx >= 0 && cy >= 0 && cx < depth.width && cy < depth.height && depth.valid(cx, cy)) {
    z = std::min(z, depth.at(cx, cy));
  }
  return z;
}

Vec3 map_pixel_to_3d(const Eigen::Vector2d& pixel, double zmin, const CameraIntrinsics& intr) {
  intr.validate();
  if (!(zmin > 0.0)) throw ScenePrepError("depth must be > 0");
  return {(pixel.x() - intr.cx) * zmin / intr.f, (pixel.y() - intr.cy) * zmin / intr.f, zmin};
}

RigidTransform compute_approach_pose(const ApproachTarget& target, double standoff, const Calibration& calib) {
  if (!calib.top_cam_to_base) throw ScenePrepError("calibration lacks top_cam_to_base");
  if (!target.location.allFinite() || !(target.location.z() > 0.0)) {
    throw ScenePrepError("approach target must be finite with Z > 0");
  }
  if (!(standoff >= 0.0)) throw ScenePrepError("standoff must be >= 0");

  const Vec3 view = target.location.normalized();
  Vec3 x = Vec3::UnitX() - Vec3::UnitX().dot(view) * view;
  if (x.norm() < 1e-9) x = Vec3::UnitY() - Vec3::UnitY().dot(view) * view;
  x.normalize();
  const Vec3 y = view.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = view;
  const RigidTransform in_top(Rot3::orthonormalize(r), target.location - standoff * view);
  return *calib.top_cam_to_base * in_top;
}

Vec3 crop_center(const Vec3& location, double diameter) {
  const double n = location.norm();
  if (!(n > 0.0)) throw ScenePrepError("crop centre needs a location away from the camera centre");
  return location + location / n * (diameter / 2.0);
}

PointCloud crop_cloud(const PointCloud& scene, const Vec3& seed, const Vec3& model_dims, double margin) {
  if (!(margin >= 1.0)) throw ScenePrepError("crop margin must be >= 1");
  if (!(model_dims.minCoeff() > 0.0)) throw ScenePrepError("crop dimensions must be > 0");
  const Vec3 half = margin * model_dims / 2.0;
  PointCloud out;
  out.frame_id = scene.frame_id;
  out.source = scene.source;
  out.has_normals = scene.has_normals;
  for (const auto& p : scene.points) {
    const Vec3 d = (p.position - seed).cwiseAbs();
    if (d.x() <= half.x() && d.y() <= half.y() && d.z() <= half.z()) out.points.push_back(p);
  }
  if (out.empty()) throw CropEmptyError("no scene points inside the crop box");
  return out;
}

}  // namespace ppfpose
