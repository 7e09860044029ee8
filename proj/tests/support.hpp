#pragma once

#include <cmath>
#include <random>

#include "ppfpose/geometry.hpp"
#include "ppfpose/pointcloud.hpp"

namespace testing {

using ppfpose::Rot3;
using ppfpose::RigidTransform;
using ppfpose::Vec3;

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v;
  do v = Vec3(n(rng), n(rng), n(rng));
  while (v.norm() < 1e-6);
  return v.normalized();
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

// Uniform over SO(3) via a normalised Gaussian quaternion.
inline Rot3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return Rot3::from_quaternion(q);
}

inline RigidTransform random_transform(std::mt19937_64& rng, double scale = 1.0) {
  return RigidTransform(random_rotation(rng), random_vec(rng, scale));
}

inline ppfpose::PointCloud random_oriented_cloud(std::mt19937_64& rng, size_t n, double scale) {
  ppfpose::PointCloud c;
  c.has_normals = true;
  for (size_t i = 0; i < n; ++i) c.points.push_back({random_vec(rng, scale), random_unit(rng)});
  return c;
}

}  // namespace testing
