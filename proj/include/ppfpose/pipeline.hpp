#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ppfpose/pointcloud.hpp"
#include "ppfpose/ppf.hpp"

namespace ppfpose {

class NoHypothesisError : public PpfError {
 public:
  using PpfError::PpfError;
};

struct TrainOptions {
  MatchParams params;
  // Voxel leaf relative to the model diameter.
  double leaf_rel = 0.05;
  // Keep only surface samples visible from outside (drops faces buried
  // between overlapping parts).
  bool visibility_filter = true;
};

struct TrainStats {
  size_t dense_points = 0;
  size_t model_points = 0;
  size_t keys = 0;
  size_t entries = 0;
  double load_factor = 0.0;
  double build_ms = 0.0;
};

/// Surface sampling, downsampling and table construction for one mesh.
ModelFeatureSpace train_model(const Mesh& mesh, const TrainOptions& opts, TrainStats* stats = nullptr);

/// Same, starting from an oriented point cloud (e.g. a PLY without faces).
ModelFeatureSpace train_model(const PointCloud& cloud, const TrainOptions& opts, TrainStats* stats = nullptr);

struct EstimateOptions {
  MatchOptions match;
  int normal_k = 10;
  double leaf_rel = 0.05;
  bool refine = true;
  // Clusters refined and compared by final ICP residual.
  int verify_top_k = 5;
  // When set, the scene is cropped to margin * crop_dims around the seed.
  std::optional<Vec3> crop_seed;
  Vec3 crop_dims = Vec3::Zero();
  double margin = 1.5;
  Vec3 viewpoint = Vec3::Zero();
  // Estimated normals closer than this (cosine) to perpendicular to the
  // viewing ray are dropped.
  double min_view_cos = 0.1;
};

struct PoseEstimate {
  RigidTransform pose;
  uint32_t votes = 0;
  bool refined = false;
  bool cropped = false;
  // Set when cropping was requested but left nothing; the full cloud was used.
  std::string crop_fallback;
  size_t scene_points = 0;  // after downsampling
  size_t hypotheses = 0;    // clusters
  size_t rank = 0;          // vote rank of the chosen cluster
  double icp_mse = 0.0;
  double match_ms = 0.0;
  double total_ms = 0.0;
};

/// Oriented, downsampled matching input from a raw camera-frame cloud.
PointCloud prepare_scene(const PointCloud& raw, const ModelFeatureSpace& space, const EstimateOptions& opts,
                         PoseEstimate* info = nullptr);

/// Full online path: crop, normals, downsample, vote, cluster, refine.
PoseEstimate estimate_pose(const PointCloud& raw_scene, const ModelFeatureSpace& space,
                           const EstimateOptions& opts);

}  // namespace ppfpose
