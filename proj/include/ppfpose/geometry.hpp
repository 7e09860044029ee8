#pragma once

#include <array>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ppfpose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Proper rotation matrix. Construction validates orthonormality and det = +1
/// within kTolerance; use Rot3::orthonormalize() for matrices that drifted.
class Rot3 {
 public:
  static constexpr double kTolerance = 1e-9;

  Rot3() : m_(Mat3::Identity()) {}
  explicit Rot3(const Mat3& m);

  static Rot3 identity() { return Rot3(); }
  static Rot3 about_axis(const Vec3& axis, double angle);
  static Rot3 about_x(double angle) { return about_axis(Vec3::UnitX(), angle); }
  static Rot3 about_y(double angle) { return about_axis(Vec3::UnitY(), angle); }
  static Rot3 about_z(double angle) { return about_axis(Vec3::UnitZ(), angle); }
  static Rot3 from_quaternion(const Eigen::Quaterniond& q);
  // Nearest rotation in the Frobenius sense (polar decomposition via SVD).
  static Rot3 orthonormalize(const Mat3& m);

  const Mat3& matrix() const { return m_; }
  Rot3 transpose() const;
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(m_); }

  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rot3 operator*(const Rot3& o) const;

  static bool is_valid(const Mat3& m, double tol = kTolerance);

 private:
  struct Unchecked {};
  Rot3(const Mat3& m, Unchecked) : m_(m) {}
  Mat3 m_;
};

/// Maps a point p to R p + t.
class RigidTransform {
 public:
  RigidTransform() = default;
  RigidTransform(const Rot3& r, const Vec3& t);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t) { return {Rot3(), t}; }
  // Validates the last row (0,0,0,1) and the rotation block.
  static RigidTransform from_matrix(const Mat4& m);

  const Rot3& rotation() const { return rot_; }
  const Vec3& translation() const { return trans_; }

  Mat4 matrix() const;
  RigidTransform inverse() const;
  Vec3 apply(const Vec3& p) const { return rot_ * p + trans_; }
  Vec3 apply_direction(const Vec3& d) const { return rot_ * d; }
  Vec3 operator*(const Vec3& p) const { return apply(p); }
  RigidTransform operator*(const RigidTransform& b) const;

  // Row-major 16 values.
  std::array<double, 16> to_row_major() const;
  static RigidTransform from_row_major(const std::array<double, 16>& v);
  // Same 16 values as decimal text, space separated.
  std::string to_text() const;
  static RigidTransform from_text(const std::string& text);

 private:
  Rot3 rot_;
  Vec3 trans_ = Vec3::Zero();
};

/// Result maps p to a(b(p)).
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);

/// Geodesic angle of the relative rotation a^T b, in [0, pi].
double rotation_angle(const Rot3& a, const Rot3& b);

/// Intrinsic Z-Y-X angles: R = Rz(rz) * Ry(ry) * Rx(rx). Each angle in (-pi, pi].
struct EulerAngles {
  double rx = 0.0;
  double ry = 0.0;
  double rz = 0.0;
};

struct EulerDecomposition {
  EulerAngles angles;
  // Set when |ry| is within kGimbalTolerance of pi/2; rz is then forced to 0
  // and the whole yaw/roll coupling is carried by rx.
  bool gimbal_lock = false;
};

inline constexpr double kGimbalTolerance = 1e-6;

EulerDecomposition rot_to_euler(const Rot3& r);
Rot3 euler_to_rot(const EulerAngles& e);

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

inline double deg2rad(double d) { return d * M_PI / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / M_PI; }

}  // namespace ppfpose
