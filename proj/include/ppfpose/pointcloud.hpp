#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppfpose/geometry.hpp"

namespace ppfpose {

class PointCloudError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OrientedPoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
};

enum class CloudSource { mesh_sampled, depth_backprojected, synthetic };

const char* to_string(CloudSource s);

struct PointCloud {
  std::vector<OrientedPoint> points;
  std::string frame_id;
  CloudSource source = CloudSource::synthetic;
  bool has_normals = false;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  std::vector<Vec3> positions() const;
  // Throws if any coordinate is non-finite or a normal is not unit length.
  void validate() const;
};

PointCloud transform_cloud(const PointCloud& cloud, const RigidTransform& t);

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> vertex_normals;  // empty or one per vertex
  std::vector<std::array<uint32_t, 3>> faces;
  // Set when the file coordinates were interpreted as millimetres.
  bool scaled_from_mm = false;

  bool has_normals() const { return !vertex_normals.empty(); }
};

Mesh transform_mesh(const Mesh& mesh, const RigidTransform& t);

/// Row-major depth in metres; NaN marks an invalid pixel.
struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<double> depth;

  DepthImage() = default;
  DepthImage(int w, int h);

  double at(int x, int y) const { return depth[static_cast<size_t>(y) * width + x]; }
  double& at(int x, int y) { return depth[static_cast<size_t>(y) * width + x]; }
  bool valid(int x, int y) const;
  size_t valid_count() const;
};

/// Pinhole intrinsics plus stereo baseline. Pixel (u, v) refers to column u,
/// row v; the optical axis passes through (cx, cy).
struct CameraIntrinsics {
  double f = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double baseline = 0.0;  // metres
  int width = 0;
  int height = 0;

  void validate() const;
  Eigen::Vector2d project(const Vec3& p) const;
};

/// Stereo relation Z = f * t / d.
double disparity_to_depth(double disparity_px, const CameraIntrinsics& intr);
double depth_to_disparity(double depth_m, const CameraIntrinsics& intr);

// ---------------------------------------------------------------------------
// PLY

struct PlyData {
  Mesh mesh;
  PointCloud cloud;  // vertices; has_normals mirrors the file
};

/// ASCII PLY only. Coordinates whose bounding-box diameter exceeds 10 are
/// taken to be millimetres and scaled by 1e-3 (recorded in mesh.scaled_from_mm).
PlyData load_ply(const std::filesystem::path& path);
PlyData parse_ply(const std::string& text);
void write_ply(const std::filesystem::path& path, const Mesh& mesh);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);

// ---------------------------------------------------------------------------
// Depth image files

/// 16-bit binary PGM (P5), millimetres, 0 = invalid.
DepthImage load_depth_pgm16(const std::filesystem::path& path);
void save_depth_pgm16(const std::filesystem::path& path, const DepthImage& img);

/// Raw little-endian float32 data preceded by one JSON header line
/// {"width":W,"height":H,"unit":"m"|"mm"}. Non-positive or NaN values are invalid.
DepthImage load_depth_raw(const std::filesystem::path& path);
void save_depth_raw(const std::filesystem::path& path, const DepthImage& img);

/// Dispatches on extension: .pgm -> PGM16, anything else -> raw.
DepthImage load_depth(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Processing

/// At most one point per occupied voxel of edge `leaf`; voxels are emitted in
/// order of first appearance.
PointCloud voxel_downsample(const PointCloud& cloud, double leaf);

/// PCA normals from the k nearest neighbours (query point included), oriented
/// toward `viewpoint`. Points with a degenerate neighbourhood are dropped.
PointCloud estimate_normals(const PointCloud& cloud, int k, const Vec3& viewpoint);

/// Pinhole back-projection of every valid pixel. Normals are not set.
PointCloud depth_to_cloud(const DepthImage& img, const CameraIntrinsics& intr,
                          const std::string& frame_id = "camera");

double bbox_diameter(const Vec3& dims);
double bbox_diameter(std::span<const Vec3> points);
double bbox_diameter(const PointCloud& cloud);
Vec3 bbox_dims(std::span<const Vec3> points);

/// Deterministic area-weighted surface sampling, roughly one point per
/// spacing^2 of area, with face normals.
PointCloud sample_mesh_surface(const Mesh& mesh, double spacing, uint64_t seed = 7);

// ---------------------------------------------------------------------------

/// Static 3-d tree over a fixed point set.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points);

  size_t size() const { return points_.size(); }
  const Vec3& point(size_t i) const { return points_[i]; }

  // k nearest indices ordered by distance (ties by index).
  std::vector<uint32_t> knn(const Vec3& q, size_t k) const;
  // Index of the nearest point and its squared distance. Requires size() > 0.
  std::pair<uint32_t, double> nearest(const Vec3& q) const;

 private:
  struct Node {
    uint32_t begin = 0, end = 0;  // range in order_ for leaves
    int32_t left = -1, right = -1;
    int axis = -1;
    double split = 0.0;
  };
  int32_t build(uint32_t begin, uint32_t end);

  std::vector<Vec3> points_;
  std::vector<uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace ppfpose
