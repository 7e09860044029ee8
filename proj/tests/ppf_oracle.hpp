#pragma once

// Test-side reimplementation of the feature, key and local angle, written
// from the formulas rather than shared with the library.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Geometry>

#include "ppfpose/pointcloud.hpp"

namespace oracle {

using ppfpose::Vec3;

inline double angle_acos(const Vec3& a, const Vec3& b) {
  const double c = a.dot(b) / (a.norm() * b.norm());
  return std::acos(std::clamp(c, -1.0, 1.0));
}

struct Feature {
  double dist, a1, a2, a3;
};

inline std::optional<Feature> feature(const Vec3& p1, const Vec3& n1, const Vec3& p2, const Vec3& n2) {
  const Vec3 d = p2 - p1;
  if (d.norm() < 1e-9) return std::nullopt;
  return Feature{d.norm(), angle_acos(n1, d), angle_acos(n2, d), angle_acos(n1, n2)};
}

inline std::array<uint32_t, 4> key(const Feature& f, double diameter, double dist_rel = 0.05, int bins = 30) {
  const double da = 2.0 * M_PI / bins;
  auto ab = [&](double a) { return std::min<uint32_t>(static_cast<uint32_t>(std::floor(a / da)), bins - 1); };
  return {static_cast<uint32_t>(std::floor(f.dist / (dist_rel * diameter))), ab(f.a1), ab(f.a2), ab(f.a3)};
}

// Angle of `other` about the reference normal after the minimal rotation
// taking the normal onto +x, measured from +y toward +z.
inline std::optional<double> alpha(const Vec3& ref, const Vec3& normal, const Vec3& other) {
  const Vec3 n = normal.normalized();
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  const Vec3 axis = n.cross(Vec3::UnitX());
  if (axis.norm() > 1e-12) {
    r = Eigen::AngleAxisd(std::atan2(axis.norm(), n.x()), axis.normalized()).toRotationMatrix();
  } else if (n.x() < 0) {
    r = Eigen::AngleAxisd(M_PI, Vec3::UnitZ()).toRotationMatrix();
  }
  const Vec3 q = r * (other - ref);
  if (std::abs(q.y()) < 1e-12 && std::abs(q.z()) < 1e-12) return std::nullopt;
  return std::atan2(q.z(), q.y());
}

inline uint32_t bin_of_difference(double d, int bins) {
  d = std::fmod(d, 2.0 * M_PI);
  if (d < 0) d += 2.0 * M_PI;
  return std::min<uint32_t>(static_cast<uint32_t>(std::floor(d / (2.0 * M_PI / bins))), bins - 1);
}

struct ModelPair {
  std::array<uint32_t, 4> key;
  uint32_t ref;
  double alpha;
};

// Every ordered model pair (i, k), i != k, with a defined feature and angle.
inline std::vector<ModelPair> model_pairs(const ppfpose::PointCloud& model, double diameter) {
  std::vector<ModelPair> out;
  for (size_t i = 0; i < model.size(); ++i) {
    const auto& mi = model.points[i];
    for (size_t k = 0; k < model.size(); ++k) {
      if (k == i) continue;
      const auto f = feature(mi.position, mi.normal, model.points[k].position, model.points[k].normal);
      const auto a = alpha(mi.position, mi.normal, model.points[k].position);
      if (f && a) out.push_back({key(*f, diameter), static_cast<uint32_t>(i), *a});
    }
  }
  return out;
}

// Exhaustive accumulator for one scene reference: every scene pair against
// every model pair, voting where the keys are equal.
inline std::vector<uint32_t> brute_force_votes(const std::vector<ModelPair>& pairs, size_t model_size,
                                               const ppfpose::PointCloud& scene, size_t ref, double diameter,
                                               int bins = 30) {
  std::vector<uint32_t> acc(model_size * bins, 0);
  const auto& sr = scene.points[ref];
  for (size_t j = 0; j < scene.size(); ++j) {
    if (j == ref) continue;
    const auto fs = feature(sr.position, sr.normal, scene.points[j].position, scene.points[j].normal);
    const auto as = alpha(sr.position, sr.normal, scene.points[j].position);
    if (!fs || !as) continue;
    const auto ks = key(*fs, diameter);
    for (const auto& mp : pairs)
      if (mp.key == ks) ++acc[mp.ref * bins + bin_of_difference(*as - mp.alpha, bins)];
  }
  return acc;
}

// Mean distance between the model points placed by two poses.
inline double add(const std::vector<Vec3>& pts, const Eigen::Matrix4d& gt, const Eigen::Matrix4d& est) {
  long double sum = 0.0L;
  for (const auto& m : pts) {
    const Eigen::Vector4d h(m.x(), m.y(), m.z(), 1.0);
    const Eigen::Vector4d a = gt * h, b = est * h;
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    sum += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return static_cast<double>(sum / static_cast<long double>(pts.size()));
}

}  // namespace oracle
