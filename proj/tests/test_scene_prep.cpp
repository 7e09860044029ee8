#include <doctest.h>

#include <algorithm>

#include "ppfpose/scene_prep.hpp"
#include "support.hpp"

using namespace ppfpose;
using testing::random_transform;
using testing::random_vec;

namespace {

CameraIntrinsics intr640() {
  CameraIntrinsics c;
  c.f = 525.0;
  c.cx = 319.5;
  c.cy = 239.5;
  c.baseline = 0.075;
  c.width = 640;
  c.height = 480;
  return c;
}

}  // namespace

TEST_CASE("bbox_diag") {
  CHECK(bbox_diag({0, 0, 3, 4}) == 5.0);
  CHECK(bbox_diag({10, 20, 96, 128}) == 160.0);
  CHECK_THROWS_AS(bbox_diag({0, 0, 0, 4}), ScenePrepError);
  CHECK_THROWS_AS(bbox_diag({0, 0, -1, 4}), ScenePrepError);
}

TEST_CASE("sampling_region is the diag-sized square, clamped") {
  const auto r = sampling_region({100, 100, 30, 40}, 640, 480);
  // centre (115, 120), half side 25
  CHECK(r.x0 == 90);
  CHECK(r.x1 == 141);
  CHECK(r.y0 == 95);
  CHECK(r.y1 == 146);
  const auto c = sampling_region({0, 0, 30, 40}, 640, 480);
  CHECK(c.x0 == 0);
  CHECK(c.y0 == 0);
}

TEST_CASE("zmin_in_region") {
  SUBCASE("constant depth") {
    DepthImage d(64, 48);
    std::fill(d.depth.begin(), d.depth.end(), 0.8);
    CHECK(zmin_in_region(d, {20, 20, 10, 10}) == 0.8);
  }
  SUBCASE("discards the lowest tail but never exceeds the centre") {
    DepthImage d(100, 100);
    std::fill(d.depth.begin(), d.depth.end(), 0.60);
    // 20x20 box -> square of side ~28 -> ~800 pixels; 10 isolated low outliers
    for (int i = 0; i < 10; ++i) d.at(40 + i, 41) = 0.30;
    // a 10x10 object at 0.55 under the box centre
    for (int y = 45; y < 55; ++y)
      for (int x = 45; x < 55; ++x) d.at(x, y) = 0.55;
    CHECK(zmin_in_region(d, {40, 40, 20, 20}) == doctest::Approx(0.55));
  }
  SUBCASE("no valid depth") {
    DepthImage d(32, 32);
    CHECK_THROWS_AS(zmin_in_region(d, {4, 4, 8, 8}), NoDepthError);
  }
  SUBCASE("never above the centre pixel on random images") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> z(0.3, 1.5);
    for (int t = 0; t < 50; ++t) {
      DepthImage d(40, 40);
      for (auto& v : d.depth) v = z(rng);
      const BBox2D b{10, 12, 9, 7};
      const auto c = b.center();
      CHECK(zmin_in_region(d, b) <= d.at(static_cast<int>(std::lround(c.x())), static_cast<int>(std::lround(c.y()))));
    }
  }
}

TEST_CASE("map_pixel_to_3d inverts the projection") {
  const CameraIntrinsics c = intr640();
  const Vec3 p = map_pixel_to_3d({c.cx, c.cy}, 0.7, c);
  CHECK(p.x() == 0.0);
  CHECK(p.y() == 0.0);
  CHECK(p.z() == 0.7);
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(0, 640), v(0, 480), z(0.2, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const Eigen::Vector2d px(u(rng), v(rng));
    const double depth = z(rng);
    const Vec3 q = map_pixel_to_3d(px, depth, c);
    CHECK((c.project(q) - px).norm() < 1e-9);
    CHECK(q.z() == depth);
  }
  CHECK_THROWS_AS(map_pixel_to_3d({1, 1}, 0.0, c), ScenePrepError);
}

TEST_CASE("compute_approach_pose") {
  Calibration cal;
  CHECK_THROWS_AS(compute_approach_pose({{0, 0, 1}, 1}, 0.2, cal), ScenePrepError);
  cal.top_cam_to_base = RigidTransform();
  const auto on_axis = compute_approach_pose({{0, 0, 1}, 1}, 0.2, cal);
  CHECK((on_axis.translation() - Vec3(0, 0, 0.8)).norm() < 1e-12);
  CHECK(rotation_angle(on_axis.rotation(), Rot3()) < 1e-12);
  CHECK_THROWS_AS(compute_approach_pose({{0, 0, -1}, 1}, 0.2, cal), ScenePrepError);

  std::mt19937_64 rng(33);
  for (int i = 0; i < 200; ++i) {
    cal.top_cam_to_base = random_transform(rng, 1.0);
    Vec3 loc = random_vec(rng, 0.3);
    loc.z() = 0.4 + std::abs(loc.z());
    const auto pose = compute_approach_pose({loc, 2}, 0.25, cal);
    const Vec3 target_base = cal.top_cam_to_base->apply(loc);
    // The target sits on the new camera's optical axis at the standoff distance.
    const Vec3 in_cam = pose.inverse().apply(target_base);
    CHECK(std::abs(in_cam.x()) < 1e-9);
    CHECK(std::abs(in_cam.y()) < 1e-9);
    CHECK(std::abs(in_cam.z() - 0.25) < 1e-9);
    const auto touch = compute_approach_pose({loc, 2}, 0.0, cal);
    CHECK((touch.translation() - target_base).norm() < 1e-9);
  }
}

TEST_CASE("crop_center moves half a diameter down the ray") {
  const Vec3 c = crop_center({0, 0, 0.5}, 0.2);
  CHECK((c - Vec3(0, 0, 0.6)).norm() < 1e-15);
  const Vec3 loc(0.3, 0.4, 1.2);
  CHECK((crop_center(loc, 0.1) - loc).norm() == doctest::Approx(0.05));
  CHECK_THROWS_AS(crop_center(Vec3::Zero(), 0.1), ScenePrepError);
}

TEST_CASE("crop_cloud") {
  std::mt19937_64 rng(34);
  const PointCloud scene = testing::random_oriented_cloud(rng, 3000, 0.5);
  const Vec3 dims(0.1, 0.2, 0.15);

  SUBCASE("large box keeps everything") {
    CHECK(crop_cloud(scene, Vec3::Zero(), Vec3::Constant(2.0), 1.0).size() == scene.size());
  }
  SUBCASE("matches the box predicate and is a subset") {
    const Vec3 seed(0.05, -0.1, 0.02);
    const auto out = crop_cloud(scene, seed, dims, 1.5);
    size_t expect = 0;
    for (const auto& p : scene.points) {
      const Vec3 d = (p.position - seed).cwiseAbs();
      if (d.x() <= 0.075 && d.y() <= 0.15 && d.z() <= 0.1125) ++expect;
    }
    CHECK(out.size() == expect);
    for (const auto& p : out.points) {
      const bool in_scene = std::any_of(scene.points.begin(), scene.points.end(),
                                        [&](const OrientedPoint& q) { return q.position == p.position; });
      CHECK(in_scene);
    }
  }
  SUBCASE("far outliers removed") {
    PointCloud s = scene;
    s.points.push_back({Vec3(5, 5, 5), Vec3::UnitZ()});
    const auto out = crop_cloud(s, Vec3::Zero(), Vec3::Constant(2.0), 1.0);
    CHECK(out.size() == scene.size());
  }
  SUBCASE("monotone in margin") {
    size_t prev = 0;
    for (double m : {1.0, 1.2, 1.5, 2.0, 3.0}) {
      const size_t n = crop_cloud(scene, Vec3::Zero(), dims, m).size();
      CHECK(n >= prev);
      prev = n;
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(crop_cloud(scene, Vec3::Zero(), dims, 0.9), ScenePrepError);
    CHECK_THROWS_AS(crop_cloud(scene, Vec3(9, 9, 9), dims, 1.5), CropEmptyError);
  }
}

TEST_CASE("preprocess_roi") {
  Image<uint8_t> img(20, 10, 7);
  const auto full = preprocess_roi(img, {0, 0, 20, 10});
  CHECK(full.data == img.data);
  const auto none = preprocess_roi(img, {5, 5, 0, 3});
  CHECK(std::all_of(none.data.begin(), none.data.end(), [](uint8_t v) { return v == 0; }));

  std::mt19937_64 rng(35);
  std::uniform_int_distribution<int> px(-5, 25), val(1, 255);
  for (int t = 0; t < 100; ++t) {
    for (auto& v : img.data) v = static_cast<uint8_t>(val(rng));
    const PixelRect r{px(rng), px(rng), px(rng), px(rng)};
    const auto out = preprocess_roi(img, r);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const bool inside = x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h;
        CHECK(out.at(x, y) == (inside ? img.at(x, y) : 0));
      }
  }
}
