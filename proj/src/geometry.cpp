#include "ppfpose/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include <Eigen/SVD>

namespace ppfpose {

namespace {

// Products drift by ~1e-16 per step; repair well before the validity bound.
constexpr double kDriftRepair = 1e-12;

double orthonormality_error(const Mat3& m) {
  return (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
}

}  // namespace

Rot3::Rot3(const Mat3& m) : m_(m) {
  if (!is_valid(m)) {
    throw GeometryError("matrix is not a proper rotation");
  }
}

bool Rot3::is_valid(const Mat3& m, double tol) {
  if (!m.allFinite()) return false;
  return orthonormality_error(m) < tol && std::abs(m.determinant() - 1.0) < tol;
}

Rot3 Rot3::about_axis(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0) || !std::isfinite(angle)) {
    throw GeometryError("rotation axis must be non-zero and angle finite");
  }
  return Rot3(Eigen::AngleAxisd(angle, axis / n).toRotationMatrix(), Unchecked{});
}

Rot3 Rot3::from_quaternion(const Eigen::Quaterniond& q) {
  const double n = q.norm();
  if (!(n > 0.0)) throw GeometryError("zero quaternion");
  return Rot3(Eigen::Quaterniond(q.coeffs() / n).toRotationMatrix(), Unchecked{});
}

Rot3 Rot3::orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return Rot3(u * v.transpose(), Unchecked{});
}

Rot3 Rot3::transpose() const { return Rot3(m_.transpose(), Unchecked{}); }

Rot3 Rot3::operator*(const Rot3& o) const {
  Mat3 p = m_ * o.m_;
  if (orthonormality_error(p) > kDriftRepair) return orthonormalize(p);
  return Rot3(p, Unchecked{});
}

RigidTransform::RigidTransform(const Rot3& r, const Vec3& t) : rot_(r), trans_(t) {
  if (!t.allFinite()) throw GeometryError("translation must be finite");
}

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
  if (std::abs(m(3, 0)) > 1e-12 || std::abs(m(3, 1)) > 1e-12 || std::abs(m(3, 2)) > 1e-12 ||
      std::abs(m(3, 3) - 1.0) > 1e-12) {
    throw GeometryError("last row of a rigid transform must be (0, 0, 0, 1)");
  }
  return RigidTransform(Rot3(Mat3(m.block<3, 3>(0, 0))), Vec3(m.block<3, 1>(0, 3)));
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.block<3, 3>(0, 0) = rot_.matrix();
  m.block<3, 1>(0, 3) = trans_;
  return m;
}

RigidTransform RigidTransform::inverse() const {
  Rot3 rt = rot_.transpose();
  return RigidTransform(rt, -(rt * trans_));
}

RigidTransform RigidTransform::operator*(const RigidTransform& b) const {
  return RigidTransform(rot_ * b.rot_, rot_ * b.trans_ + trans_);
}

std::array<double, 16> RigidTransform::to_row_major() const {
  std::array<double, 16> out{};
  const Mat4 m = matrix();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) out[static_cast<size_t>(r * 4 + c)] = m(r, c);
  return out;
}

RigidTransform RigidTransform::from_row_major(const std::array<double, 16>& v) {
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<size_t>(r * 4 + c)];
  return from_matrix(m);
}

std::string RigidTransform::to_text() const {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  const auto v = to_row_major();
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    os << v[i];
  }
  return os.str();
}

RigidTransform RigidTransform::from_text(const std::string& text) {
  std::istringstream is(text);
  std::array<double, 16> v{};
  for (auto& x : v) {
    if (!(is >> x)) throw GeometryError("expected 16 decimal fields for a 4x4 transform");
  }
  std::string rest;
  if (is >> rest) throw GeometryError("trailing data after 16 transform fields");
  return from_row_major(v);
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }

double rotation_angle(const Rot3& a, const Rot3& b) {
  const double tr = (a.matrix().transpose() * b.matrix()).trace();
  const double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  // acos loses precision near 0 and pi; use the skew part there.
  if (c > 0.99 || c < -0.99) {
    const Mat3 rel = a.matrix().transpose() * b.matrix();
    const Vec3 w(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
    const double s = std::min(1.0, w.norm() / 2.0);
    return c > 0.0 ? std::asin(s) : M_PI - std::asin(s);
  }
  return std::acos(c);
}

double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * M_PI);  // [-pi, pi]
  if (w <= -M_PI) w += 2.0 * M_PI;
  return w;
}

EulerDecomposition rot_to_euler(const Rot3& r) {
  const Mat3& m = r.matrix();
  EulerDecomposition out;
  const double sy = std::clamp(-m(2, 0), -1.0, 1.0);
  const double ry = std::asin(sy);
  if (std::abs(std::abs(ry) - M_PI / 2.0) < kGimbalTolerance) {
    // R = Rz(0) Ry(+-pi/2) Rx(rx): the remaining freedom shows up in rows 0/1.
    out.gimbal_lock = true;
    out.angles.rz = 0.0;
    out.angles.ry = sy > 0.0 ? M_PI / 2.0 : -M_PI / 2.0;
    out.angles.rx = sy > 0.0 ? wrap_angle(std::atan2(m(0, 1), m(1, 1)))
                             : wrap_angle(std::atan2(-m(0, 1), m(1, 1)));
    return out;
  }
  out.angles.rz = wrap_angle(std::atan2(m(1, 0), m(0, 0)));
  out.angles.ry = wrap_angle(std::atan2(-m(2, 0), std::hypot(m(0, 0), m(1, 0))));
  out.angles.rx = wrap_angle(std::atan2(m(2, 1), m(2, 2)));
  return out;
}

Rot3 euler_to_rot(const EulerAngles& e) {
  return Rot3::about_z(e.rz) * Rot3::about_y(e.ry) * Rot3::about_x(e.rx);
}

}  // namespace ppfpose
