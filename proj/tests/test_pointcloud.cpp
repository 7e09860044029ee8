#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ppfpose/pointcloud.hpp"
#include "support.hpp"

using namespace ppfpose;

namespace {

const char* kUnitCubePly = R"(ply
format ascii 1.0
element vertex 8
property float x
property float y
property float z
element face 2
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
3 0 1 2
3 0 2 3
)";

CameraIntrinsics test_intrinsics() { return {500.0, 319.5, 239.5, 0.1, 640, 480}; }

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ppfpose_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("load_ply: unit cube") {
  const PlyData d = parse_ply(kUnitCubePly);
  CHECK(d.cloud.size() == 8);
  CHECK(d.mesh.faces.size() == 2);
  CHECK_FALSE(d.cloud.has_normals);
  CHECK_FALSE(d.mesh.scaled_from_mm);
  CHECK(bbox_diameter(d.cloud) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("load_ply: millimetre input is rescaled") {
  std::string text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
                     "end_header\n0 0 0\n101 91 90\n";
  const PlyData d = parse_ply(text);
  CHECK(d.mesh.scaled_from_mm);
  CHECK(bbox_diameter(d.cloud) == doctest::Approx(0.16304).epsilon(1e-4));
}

TEST_CASE("load_ply: malformed and binary input") {
  CHECK_THROWS_AS(parse_ply("not a ply\n"), PointCloudError);
  CHECK_THROWS_AS(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n"), PointCloudError);
  CHECK_THROWS_AS(
      parse_ply("ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\n"
                "end_header\n"),
      PointCloudError);
  CHECK_THROWS_AS(load_ply("/nonexistent/file.ply"), PointCloudError);
}

TEST_CASE("load_ply: normals are read when present") {
  const std::string text =
      "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
      "property float nx\nproperty float ny\nproperty float nz\nend_header\n0 0 0 0 0 1\n0.1 0 0 0 1 0\n";
  const PlyData d = parse_ply(text);
  REQUIRE(d.cloud.has_normals);
  CHECK(d.cloud.points[1].normal == Vec3(0, 1, 0));
}

TEST_CASE("bbox_diameter from table dimensions") {
  CHECK(bbox_diameter(Vec3(0.053, 0.093, 0.033)) == doctest::Approx(0.11201).epsilon(1e-4));
  CHECK(bbox_diameter(Vec3(0.101, 0.091, 0.090)) == doctest::Approx(0.16304).epsilon(1e-4));
  const std::vector<Vec3> one{Vec3(1, 2, 3)};
  CHECK(bbox_diameter(one) == 0.0);
}

TEST_CASE("voxel_downsample: no-op, collapse and counting") {
  PointCloud sparse;
  for (int i = 0; i < 10; ++i) sparse.points.push_back({Vec3(i * 0.1 + 0.01, 0.01, 0.01), Vec3::Zero()});
  CHECK(voxel_downsample(sparse, 0.05).size() == 10);

  PointCloud same;
  for (int i = 0; i < 1000; ++i) same.points.push_back({Vec3(0.3, 0.2, 0.1), Vec3::Zero()});
  CHECK(voxel_downsample(same, 0.01).size() == 1);

  PointCloud grid;
  std::set<std::array<long, 3>> voxels;
  const double leaf = 0.002;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j)
      for (int k = 0; k < 10; ++k) {
        const Vec3 p((i + 0.5) * 1e-3, (j + 0.5) * 1e-3, (k + 0.5) * 1e-3);
        grid.points.push_back({p, Vec3::Zero()});
        voxels.insert({static_cast<long>(std::floor(p.x() / leaf)), static_cast<long>(std::floor(p.y() / leaf)),
                       static_cast<long>(std::floor(p.z() / leaf))});
      }
  CHECK(voxels.size() == 125);
  CHECK(voxel_downsample(grid, leaf).size() == voxels.size());
  CHECK_THROWS_AS(voxel_downsample(grid, 0.0), PointCloudError);
}

TEST_CASE("voxel_downsample: centroids, determinism and monotone counts") {
  std::mt19937_64 rng(11);
  PointCloud c = testing::random_oriented_cloud(rng, 3000, 0.1);
  const PointCloud a = voxel_downsample(c, 0.02), b = voxel_downsample(c, 0.02);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a.points[i].position == b.points[i].position);
  size_t prev = c.size();
  for (double leaf : {0.005, 0.01, 0.02, 0.04, 0.08, 0.16}) {
    const size_t n = voxel_downsample(c, leaf).size();
    CHECK(n <= prev);
    prev = n;
  }
  PointCloud two;
  two.points = {{Vec3(0.001, 0.001, 0.001), Vec3::Zero()}, {Vec3(0.003, 0.001, 0.001), Vec3::Zero()}};
  const auto one = voxel_downsample(two, 0.01);
  REQUIRE(one.size() == 1);
  CHECK((one.points[0].position - Vec3(0.002, 0.001, 0.001)).norm() < 1e-15);
}

TEST_CASE("estimate_normals: plane") {
  PointCloud plane;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) plane.points.push_back({Vec3(i * 0.01, j * 0.01, 0.0), Vec3::Zero()});
  const auto n = estimate_normals(plane, 10, Vec3(0.1, 0.1, 1.0));
  REQUIRE(n.size() == plane.size());
  for (const auto& p : n.points) CHECK((p.normal - Vec3(0, 0, 1)).norm() < 1e-9);
}

TEST_CASE("estimate_normals: sphere normals are radial") {
  // Evenly spread (Fibonacci lattice) samples.
  PointCloud sphere;
  const int n_pts = 4000;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n_pts; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n_pts;
    const double r = std::sqrt(1.0 - z * z);
    sphere.points.push_back({0.1 * Vec3(r * std::cos(golden * i), r * std::sin(golden * i), z), Vec3::Zero()});
  }
  const Vec3 view(0, 0, 10);
  const auto n = estimate_normals(sphere, 10, view);
  REQUIRE(n.size() > 3900);
  for (const auto& p : n.points) {
    const Vec3 radial = p.position.normalized();
    CHECK(std::abs(p.normal.dot(radial)) > std::cos(5.0 * M_PI / 180.0));
    CHECK(std::abs(p.normal.norm() - 1.0) < 1e-6);
    CHECK(p.normal.dot(view - p.position) >= 0.0);
  }
}

TEST_CASE("estimate_normals: k larger than the cloud") {
  PointCloud c;
  for (int i = 0; i < 5; ++i) c.points.push_back({Vec3(i, 0, 0), Vec3::Zero()});
  CHECK_THROWS_AS(estimate_normals(c, 10, Vec3::Zero()), PointCloudError);
}

TEST_CASE("depth_to_cloud: principal point") {
  CameraIntrinsics intr{500.0, 2.0, 1.0, 0.1, 5, 3};
  DepthImage img(5, 3);
  std::fill(img.depth.begin(), img.depth.end(), std::nan(""));
  img.at(2, 1) = 1.0;
  const auto c = depth_to_cloud(img, intr);
  REQUIRE(c.size() == 1);
  CHECK(c.points[0].position == Vec3(0, 0, 1));
  CHECK(c.source == CloudSource::depth_backprojected);
}

TEST_CASE("depth_to_cloud: plane stays planar") {
  const auto intr = test_intrinsics();
  // Plane n.p = d with n = (0.2, -0.1, 1) normalised.
  const Vec3 n = Vec3(0.2, -0.1, 1.0).normalized();
  const double d = 0.8;
  DepthImage img(intr.width, intr.height);
  for (int v = 0; v < intr.height; ++v)
    for (int u = 0; u < intr.width; ++u) {
      const Vec3 ray((u - intr.cx) / intr.f, (v - intr.cy) / intr.f, 1.0);
      img.at(u, v) = d / n.dot(ray);
    }
  const auto c = depth_to_cloud(img, intr);
  CHECK(c.size() == static_cast<size_t>(intr.width * intr.height));
  double worst = 0.0;
  for (const auto& p : c.points) worst = std::max(worst, std::abs(n.dot(p.position) - d));
  CHECK(worst < 1e-9);
}

TEST_CASE("depth_to_cloud: back-projected points reproject onto their pixels") {
  CameraIntrinsics intr{300.0, 9.5, 7.5, 0.1, 20, 16};
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> z(0.3, 2.0);
  DepthImage img(intr.width, intr.height);
  for (auto& d : img.depth) d = z(rng);
  const auto c = depth_to_cloud(img, intr);
  REQUIRE(c.size() == img.depth.size());
  size_t i = 0;
  for (int v = 0; v < intr.height; ++v)
    for (int u = 0; u < intr.width; ++u, ++i) {
      const Vec3& p = c.points[i].position;
      const auto px = intr.project(p);
      CHECK(std::abs(px.x() - u) < 1e-9);
      CHECK(std::abs(px.y() - v) < 1e-9);
      CHECK(std::abs(p.z() - img.at(u, v)) < 1e-12);
    }
}

TEST_CASE("depth_to_cloud: no valid pixels") {
  DepthImage img(4, 4);
  std::fill(img.depth.begin(), img.depth.end(), std::nan(""));
  CHECK_THROWS_AS(depth_to_cloud(img, CameraIntrinsics{100, 2, 2, 0.1, 4, 4}), PointCloudError);
}

TEST_CASE("disparity and depth") {
  CameraIntrinsics intr{640.0, 320, 240, 0.16, 640, 480};
  CHECK(disparity_to_depth(128.0, intr) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(depth_to_disparity(0.8, intr) == doctest::Approx(128.0).epsilon(1e-12));
}

TEST_CASE("depth files round trip") {
  DepthImage img(7, 5);
  for (size_t i = 0; i < img.depth.size(); ++i) img.depth[i] = 0.5 + 0.001 * static_cast<double>(i);
  img.depth[3] = std::nan("");

  const auto pgm = temp_path("d.pgm");
  save_depth_pgm16(pgm, img);
  const auto a = load_depth(pgm);
  REQUIRE(a.width == 7);
  REQUIRE(a.height == 5);
  CHECK_FALSE(a.valid(3, 0));
  CHECK(a.at(1, 0) == doctest::Approx(0.501).epsilon(1e-9));

  const auto raw = temp_path("d.depth");
  save_depth_raw(raw, img);
  const auto b = load_depth(raw);
  CHECK_FALSE(b.valid(3, 0));
  for (size_t i = 0; i < img.depth.size(); ++i) {
    if (i == 3) continue;
    CHECK(std::abs(b.depth[i] - img.depth[i]) < 1e-6);
  }
}

TEST_CASE("PointCloud::validate") {
  PointCloud c;
  c.has_normals = true;
  c.points.push_back({Vec3(0, 0, 0), Vec3(0, 0, 2)});
  CHECK_THROWS_AS(c.validate(), PointCloudError);
  c.points[0].normal = Vec3(0, 0, 1);
  CHECK_NOTHROW(c.validate());
  c.points[0].position.x() = std::nan("");
  CHECK_THROWS_AS(c.validate(), PointCloudError);
}

TEST_CASE("KdTree matches brute force") {
  std::mt19937_64 rng(14);
  std::vector<Vec3> pts;
  for (int i = 0; i < 500; ++i) pts.push_back(testing::random_vec(rng, 1.0));
  const KdTree tree(pts);
  for (int q = 0; q < 50; ++q) {
    const Vec3 p = testing::random_vec(rng, 1.2);
    std::vector<std::pair<double, uint32_t>> all;
    for (uint32_t i = 0; i < pts.size(); ++i) all.push_back({(pts[i] - p).squaredNorm(), i});
    std::sort(all.begin(), all.end());
    const auto knn = tree.knn(p, 8);
    REQUIRE(knn.size() == 8);
    for (size_t k = 0; k < 8; ++k) CHECK(knn[k] == all[k].second);
    CHECK(tree.nearest(p).first == all[0].second);
  }
}
