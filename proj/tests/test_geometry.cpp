#include <doctest.h>

#include "ppfpose/geometry.hpp"
#include "support.hpp"

using namespace ppfpose;
using testing::random_rotation;
using testing::random_transform;
using testing::random_unit;

namespace {

double max_abs(const Mat3& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("compose: identity and inverse") {
  std::mt19937_64 rng(1);
  const RigidTransform t = random_transform(rng);
  const RigidTransform id;
  CHECK((compose(id, t).matrix() - t.matrix()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((compose(t, t.inverse()).matrix() - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("compose matches point-by-point application") {
  std::mt19937_64 rng(2);
  const RigidTransform a = random_transform(rng), b = random_transform(rng);
  const RigidTransform ab = compose(a, b);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p = testing::random_vec(rng, 2.0);
    CHECK((ab.apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
  }
}

TEST_CASE("rotation_angle: trivial cases") {
  std::mt19937_64 rng(3);
  const Rot3 r = random_rotation(rng);
  CHECK(rotation_angle(r, r) < 1e-12);
  CHECK(rotation_angle(Rot3(), Rot3::about_z(M_PI / 2)) == doctest::Approx(M_PI / 2).epsilon(1e-12));
}

TEST_CASE("rotation_angle agrees with the quaternion oracle") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 500; ++i) {
    const Rot3 a = random_rotation(rng), b = random_rotation(rng);
    Eigen::Quaterniond qa(a.matrix()), qb(b.matrix());
    const double oracle = 2.0 * std::atan2((qa.conjugate() * qb).vec().norm(), std::abs((qa.conjugate() * qb).w()));
    CHECK(std::abs(rotation_angle(a, b) - oracle) < 1e-9);
    CHECK(rotation_angle(a, b) == rotation_angle(b, a));
  }
}

TEST_CASE("rotation_angle recovers |theta| about any axis") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> th(0.0, M_PI);
  for (int i = 0; i < 500; ++i) {
    const Rot3 a = random_rotation(rng);
    const double t = th(rng);
    CHECK(std::abs(rotation_angle(a, a * Rot3::about_axis(random_unit(rng), t)) - t) < 1e-9);
  }
}

TEST_CASE("Rot3 rejects non-rotations") {
  Mat3 m = Mat3::Identity();
  m(0, 0) = -1.0;
  CHECK_THROWS_AS(Rot3{m}, GeometryError);
  CHECK_THROWS_AS(Rot3{Mat3::Identity() * 1.01}, GeometryError);
}

TEST_CASE("long compose chains stay orthonormal") {
  std::mt19937_64 rng(6);
  RigidTransform acc;
  for (int i = 0; i < 100; ++i) {
    acc = compose(acc, random_transform(rng));
    const Mat3& r = acc.rotation().matrix();
    REQUIRE(std::abs(r.determinant() - 1.0) < 1e-9);
    REQUIRE(max_abs(r.transpose() * r - Mat3::Identity()) < 1e-9);
  }
}

TEST_CASE("Euler: identity and single-axis cases") {
  const auto e0 = rot_to_euler(Rot3()).angles;
  CHECK(e0.rx == 0.0);
  CHECK(e0.ry == 0.0);
  CHECK(e0.rz == 0.0);
  const auto ez = rot_to_euler(Rot3::about_z(M_PI / 2)).angles;
  CHECK(std::abs(ez.rx) < 1e-12);
  CHECK(std::abs(ez.ry) < 1e-12);
  CHECK(std::abs(ez.rz - M_PI / 2) < 1e-12);
}

TEST_CASE("Euler convention is intrinsic Z-Y-X") {
  const EulerAngles e{0.3, -0.2, 1.1};
  const Mat3 expect = Rot3::about_z(e.rz).matrix() * Rot3::about_y(e.ry).matrix() * Rot3::about_x(e.rx).matrix();
  CHECK(max_abs(euler_to_rot(e).matrix() - expect) < 1e-15);
}

TEST_CASE("Euler round trip on random rotations") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    const Rot3 r = random_rotation(rng);
    const auto d = rot_to_euler(r);
    if (d.gimbal_lock) continue;
    CHECK(max_abs(euler_to_rot(d.angles).matrix() - r.matrix()) < 1e-9);
    for (double a : {d.angles.rx, d.angles.ry, d.angles.rz}) {
      CHECK(a > -M_PI);
      CHECK(a <= M_PI);
    }
  }
}

TEST_CASE("Euler gimbal lock is flagged and rz forced to zero") {
  const Rot3 r = euler_to_rot({0.4, M_PI / 2, 0.3});
  const auto d = rot_to_euler(r);
  CHECK(d.gimbal_lock);
  CHECK(d.angles.rz == 0.0);
  CHECK(max_abs(euler_to_rot(d.angles).matrix() - r.matrix()) < 1e-9);
}

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  CHECK(wrap_angle(M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(-M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(3 * M_PI / 2) == doctest::Approx(-M_PI / 2));
  CHECK(wrap_angle(0.25) == 0.25);
}

TEST_CASE("RigidTransform text and matrix serialisation") {
  std::mt19937_64 rng(8);
  const RigidTransform t = random_transform(rng);
  const RigidTransform back = RigidTransform::from_text(t.to_text());
  CHECK((back.matrix() - t.matrix()).cwiseAbs().maxCoeff() == 0.0);
  const auto rm = t.to_row_major();
  CHECK(rm[12] == 0.0);
  CHECK(rm[15] == 1.0);
  Mat4 bad = t.matrix();
  bad(3, 0) = 0.5;
  CHECK_THROWS_AS(RigidTransform::from_matrix(bad), GeometryError);
}
