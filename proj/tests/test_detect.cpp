#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "ppfpose/detect.hpp"
#include "support.hpp"

using namespace ppfpose;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto dir = std::filesystem::temp_directory_path() / "ppfpose_tests";
  std::filesystem::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p) << text;
  return p;
}

Detection det(int cls, double score, double x, double y) {
  Detection d;
  d.class_id = cls;
  d.score = score;
  d.bbox = {x, y, 10, 10};
  return d;
}

}  // namespace

TEST_CASE("load_detections") {
  CHECK(load_detections(write_temp("empty.json", "[]")).empty());
  const auto one = load_detections(
      write_temp("one.json", R"([{"class_id": 3, "score": 0.9, "bbox": [10, 20, 30, 40]}])"));
  REQUIRE(one.size() == 1);
  CHECK(one[0].class_id == 3);
  CHECK(one[0].score == 0.9);
  CHECK(one[0].bbox == BBox2D{10, 20, 30, 40});
  CHECK_THROWS_AS(parse_detections(R"([{"class_id": 3, "score": 1.2, "bbox": [10, 20, 30, 40]}])"),
                  DetectionSchemaError);
  CHECK_THROWS_AS(parse_detections(R"([{"class_id": 0, "score": 0.5, "bbox": [10, 20, 30, 40]}])"),
                  DetectionSchemaError);
  CHECK_THROWS_AS(parse_detections(R"([{"class_id": 1, "score": 0.5, "bbox": [10, 20, 0, 40]}])"),
                  DetectionSchemaError);
  CHECK_THROWS_AS(parse_detections(R"([{"class_id": 1, "score": 0.5, "bbox": [1, 2, 3, 4], "x": 1}])"),
                  DetectionSchemaError);
  CHECK_THROWS_AS(parse_detections("{"), DetectionSchemaError);
  CHECK_THROWS_AS(load_detections("/nonexistent/dets.json"), DetectionSchemaError);
}

TEST_CASE("detections save and reload") {
  std::vector<Detection> v{det(2, 0.5, 1, 2), det(1, 0.25, 3, 4)};
  const auto p = write_temp("roundtrip.json", "");
  save_detections(p, v);
  const auto back = load_detections(p);
  REQUIRE(back.size() == 2);
  CHECK(queue_bytes({back}) == queue_bytes({v}));
}

TEST_CASE("group_and_sort: class, then score, then centre") {
  const auto q = group_and_sort({det(3, 0.9, 0, 0), det(1, 0.5, 50, 50), det(1, 0.8, 0, 0)});
  REQUIRE(q.size() == 3);
  CHECK(q.items[0].class_id == 1);
  CHECK(q.items[0].score == 0.8);
  CHECK(q.items[1].class_id == 1);
  CHECK(q.items[2].class_id == 3);
  CHECK(q.classes() == std::vector<int>{1, 3});

  const auto tie = group_and_sort({det(2, 0.5, 40, 10), det(2, 0.5, 10, 20), det(2, 0.5, 5, 10)});
  CHECK(tie.items[0].bbox.x == 5);
  CHECK(tie.items[1].bbox.x == 40);
  CHECK(tie.items[2].bbox.y == 20);
}

TEST_CASE("group_and_sort: order-independent and idempotent") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> cls(1, 4), coord(0, 5);
  std::uniform_int_distribution<int> score(0, 3);
  for (int t = 0; t < 200; ++t) {
    std::vector<Detection> v;
    const int n = std::uniform_int_distribution<int>(0, 12)(rng);
    for (int i = 0; i < n; ++i) v.push_back(det(cls(rng), score(rng) / 3.0, coord(rng), coord(rng)));
    const std::string ref = queue_bytes(group_and_sort(v));
    std::shuffle(v.begin(), v.end(), rng);
    const auto q = group_and_sort(v);
    CHECK(queue_bytes(q) == ref);
    CHECK(queue_bytes(group_and_sort(q.items)) == ref);
    // Each class appears as one contiguous run.
    const auto cs = q.classes();
    CHECK(std::is_sorted(cs.begin(), cs.end()));
    CHECK(std::adjacent_find(cs.begin(), cs.end()) == cs.end());
  }
}

TEST_CASE("build_query_queue skips classes without a model") {
  std::vector<Detection> skipped;
  const auto q = build_query_queue({det(1, 1, 0, 0), det(7, 1, 0, 0), det(2, 1, 0, 0)}, {1, 2}, &skipped);
  CHECK(q.classes() == std::vector<int>{1, 2});
  REQUIRE(skipped.size() == 1);
  CHECK(skipped[0].class_id == 7);
}

TEST_CASE("synthetic_detect") {
  SimWorld w = default_world();
  const CameraIntrinsics intr{500.0, 319.5, 239.5, 0.05, 640, 480};
  CHECK(synthetic_detect(w, intr, RigidTransform()).empty());

  w.objects.push_back({4, RigidTransform(Rot3(), Vec3(0, 0, 1)), "procedural:box"});
  w.resolve_meshes();
  const auto on_axis = synthetic_detect(w, intr, RigidTransform());
  REQUIRE(on_axis.size() == 1);
  CHECK(on_axis[0].class_id == 4);
  CHECK(on_axis[0].score == 1.0);
  CHECK((on_axis[0].bbox.center() - Eigen::Vector2d(intr.cx, intr.cy)).norm() < 1e-9);

  // Behind the camera: no detection.
  w.objects[0].pose = RigidTransform(Rot3(), Vec3(0, 0, -1));
  CHECK(synthetic_detect(w, intr, RigidTransform()).empty());

  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> xy(-0.2, 0.2), z(0.6, 1.2);
  for (int t = 0; t < 50; ++t) {
    w.objects[0].pose = RigidTransform(testing::random_rotation(rng), Vec3(xy(rng), xy(rng), z(rng)));
    const auto d = synthetic_detect(w, intr, RigidTransform());
    REQUIRE(d.size() == 1);
    const BBox2D& b = d[0].bbox;
    CHECK(b.x >= 0);
    CHECK(b.y >= 0);
    CHECK(b.x + b.w <= intr.width);
    CHECK(b.y + b.h <= intr.height);
    for (const Vec3& v : w.meshes.at("procedural:box").vertices) {
      const auto px = intr.project(w.objects[0].pose.apply(v));
      if (px.x() < 0 || px.y() < 0 || px.x() > intr.width || px.y() > intr.height) continue;
      CHECK(px.x() >= b.x - 1e-9);
      CHECK(px.x() <= b.x + b.w + 1e-9);
      CHECK(px.y() >= b.y - 1e-9);
      CHECK(px.y() <= b.y + b.h + 1e-9);
    }
  }
}
