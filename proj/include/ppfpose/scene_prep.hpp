#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <algorithm>
#include <vector>

#include "ppfpose/geometry.hpp"
#include "ppfpose/pointcloud.hpp"

namespace ppfpose {

class ScenePrepError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoDepthError : public ScenePrepError {
 public:
  using ScenePrepError::ScenePrepError;
};

class CropEmptyError : public ScenePrepError {
 public:
  using ScenePrepError::ScenePrepError;
};

struct BBox2D {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  Eigen::Vector2d center() const { return {x + w / 2.0, y + h / 2.0}; }
  bool valid() const;
  // Throws unless w > 0 and h > 0 and all fields finite.
  void validate() const;
  BBox2D clamped(int width, int height) const;
  bool operator==(const BBox2D&) const = default;
};

struct ApproachTarget {
  Vec3 location = Vec3::Zero();  // top-camera frame
  int class_id = 0;
};

/// Extrinsics supplied by configuration (no calibration procedure here).
struct Calibration {
  std::optional<RigidTransform> top_cam_to_base;
  std::optional<RigidTransform> hand_cam_to_flange;
  CameraIntrinsics top_intrinsics;
  CameraIntrinsics hand_intrinsics;
  double standoff = 0.2;
  double margin = 1.5;
};

double bbox_diag(const BBox2D& b);

/// Side length bbox_diag(b) square around the box centre, clamped to the image.
struct PixelRegion {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive-exclusive
};
PixelRegion sampling_region(const BBox2D& b, int width, int height);

/// Minimum depth over the region after discarding the lowest 5% of valid depths.
double zmin_in_region(const DepthImage& depth, const BBox2D& b);

/// Pinhole inverse at the given depth.
Vec3 map_pixel_to_3d(const Eigen::Vector2d& pixel, double zmin, const CameraIntrinsics& intr);

/// Camera pose (camera -> base) standing `standoff` back from the target along
/// the top camera's viewing ray through it, looking at the target.
RigidTransform compute_approach_pose(const ApproachTarget& target, double standoff, const Calibration& calib);

/// Crop centre for a located target given in the capturing camera's frame.
/// The location is the nearest visible surface point, so the centre is put
/// half a model diameter further along the viewing ray.
Vec3 crop_center(const Vec3& location, double diameter);

/// Axis-aligned box of half-extents margin * dims / 2 around `seed`.
PointCloud crop_cloud(const PointCloud& scene, const Vec3& seed, const Vec3& model_dims, double margin);

/// Zero everything outside `roi`. A ROI with w or h <= 0 zeroes the image.
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}
  T& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
};

struct PixelRect {
  int x = 0, y = 0, w = 0, h = 0;
};

template <typename T>
Image<T> preprocess_roi(const Image<T>& image, const PixelRect& roi) {
  Image<T> out(image.width, image.height, T{});
  const int x0 = std::max(0, roi.x), y0 = std::max(0, roi.y);
  const int x1 = std::min(image.width, roi.x + std::max(0, roi.w));
  const int y1 = std::min(image.height, roi.y + std::max(0, roi.h));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) out.at(x, y) = image.at(x, y);
  return out;
}

}  // namespace ppfpose
