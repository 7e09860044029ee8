#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppfpose/geometry.hpp"
#include "ppfpose/pointcloud.hpp"

namespace ppfpose {

class PpfError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for point pairs whose feature or local angle is undefined.
class DegeneratePairError : public PpfError {
 public:
  using PpfError::PpfError;
};

class RefineFailedError : public PpfError {
 public:
  using PpfError::PpfError;
};

class ModelFileError : public PpfError {
 public:
  using PpfError::PpfError;
};

/// Distance and the three angles (n1,d), (n2,d), (n1,n2).
struct PPFDescriptor {
  double dist = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;
  double a3 = 0.0;
};

struct QuantizedKey {
  std::array<uint32_t, 4> bins{};

  uint64_t packed() const;
  static QuantizedKey unpack(uint64_t k);
  bool operator==(const QuantizedKey&) const = default;
};

struct MatchParams {
  double dist_step_rel = 0.05;
  int n_angle_bins = 30;
  int scene_ref_stride = 5;
  double cluster_t_rel = 0.1;
  double cluster_r = 12.0 * M_PI / 180.0;
  double peak_keep_rel = 0.9;

  double angle_step() const { return 2.0 * M_PI / n_angle_bins; }
  void validate() const;
  bool operator==(const MatchParams&) const = default;
};

PPFDescriptor compute_ppf(const Vec3& p1, const Vec3& n1, const Vec3& p2, const Vec3& n2);
QuantizedKey quantize(const PPFDescriptor& f, double diameter, const MatchParams& params);

/// Transform taking `ref` to the origin with its normal on +x. Uses the
/// minimal rotation; a normal on -x is turned by pi about +z.
RigidTransform reference_frame(const OrientedPoint& ref);

/// Angle of reference_frame(ref)(other) in the y-z plane, measured from +y
/// toward +z, in (-pi, pi].
double local_alpha(const OrientedPoint& ref, const Vec3& other_position);
double local_alpha(const RigidTransform& ref_frame, const Vec3& other_position);

/// Accumulator bin of an alpha difference (any real value, wrapped mod 2pi).
uint32_t alpha_bin(double alpha_diff, int n_bins);

/// Scene-to-model pose implied by matching scene ref to model ref with the
/// given rotation about the aligned normal.
RigidTransform pose_from_alignment(const RigidTransform& scene_frame, const RigidTransform& model_frame,
                                   double alpha);

struct ModelEntry {
  uint32_t ref_index = 0;
  double alpha = 0.0;
};

/// Exact-key hash table from packed quantized keys to contiguous entry lists.
/// Open addressing with linear probing over a power-of-two slot array.
class FeatureTable {
 public:
  struct Bucket {
    uint64_t key = 0;
    uint32_t offset = 0;
    uint32_t count = 0;
  };

  FeatureTable() = default;
  // Entries for equal keys are ordered by ref_index, then input order.
  static FeatureTable build(std::vector<std::pair<uint64_t, ModelEntry>> items);

  std::span<const ModelEntry> lookup(uint64_t key) const;
  std::span<const ModelEntry> lookup(const QuantizedKey& key) const { return lookup(key.packed()); }

  size_t key_count() const { return buckets_.size(); }
  size_t entry_count() const { return entries_.size(); }
  double load_factor() const;
  // Buckets sorted by key; entries addressed through Bucket::offset/count.
  const std::vector<Bucket>& buckets() const { return buckets_; }
  const std::vector<ModelEntry>& entries() const { return entries_; }

 private:
  void index();

  std::vector<Bucket> buckets_;
  std::vector<ModelEntry> entries_;
  std::vector<int32_t> slots_;  // -1 empty, else bucket id
};

struct ModelFeatureSpace {
  FeatureTable table;
  double model_diameter = 0.0;
  Vec3 model_dims = Vec3::Zero();
  MatchParams params;
  PointCloud model_cloud;
  size_t degenerate_pairs = 0;

  size_t model_size() const { return model_cloud.size(); }
};

/// All ordered pairs (i, j), i != j, of a downsampled model with normals.
/// `diameter` defaults to the bounding-box diameter of the cloud.
ModelFeatureSpace build_model_space(const PointCloud& model, const MatchParams& params,
                                    double diameter = 0.0);

void save_model_space(const std::filesystem::path& path, const ModelFeatureSpace& space);
ModelFeatureSpace load_model_space(const std::filesystem::path& path);
std::vector<uint8_t> serialize_model_space(const ModelFeatureSpace& space);
ModelFeatureSpace deserialize_model_space(std::span<const uint8_t> bytes);

struct PoseHypothesis {
  RigidTransform pose;  // model -> scene frame
  uint32_t votes = 0;
  uint32_t cluster_size = 1;
  uint32_t scene_ref = 0;
  uint32_t model_ref = 0;
};

/// Vote grid for one scene reference point: model_size x n_angle_bins counts
/// (row = model reference index).
struct VoteAccumulator {
  size_t rows = 0;
  int bins = 0;
  std::vector<uint32_t> counts;

  uint32_t at(size_t row, int bin) const { return counts[row * static_cast<size_t>(bins) + static_cast<size_t>(bin)]; }
};

/// Votes of scene point `ref` against every other scene point.
VoteAccumulator vote_for_reference(const PointCloud& scene, size_t ref, const ModelFeatureSpace& space);

struct MatchOptions {
  // 0 = hardware concurrency.
  unsigned threads = 1;
};

/// Raw per-reference peaks, sorted by (votes desc, scene ref asc, model ref asc, alpha bin asc).
std::vector<PoseHypothesis> vote_hypotheses(const PointCloud& scene, const ModelFeatureSpace& space,
                                            const MatchOptions& opts = {});

/// Clustered hypotheses ranked by cluster votes.
std::vector<PoseHypothesis> match(const PointCloud& scene, const ModelFeatureSpace& space,
                                  const MatchOptions& opts = {});

std::vector<PoseHypothesis> cluster_poses(std::vector<PoseHypothesis> hyps, double diameter,
                                          const MatchParams& params);

struct IcpOptions {
  int max_iterations = 30;
  double rel_mse_tol = 1e-5;
  double cutoff = 0.0;  // required, metres
};

struct IcpResult {
  RigidTransform pose;
  double mse = 0.0;
  int iterations = 0;
  // Truncated mean squared residual after each accepted iteration; starts with the initial pose.
  std::vector<double> mse_history;
  size_t inliers = 0;
};

/// Point-to-point ICP aligning `model` (placed by the pose) to `scene`. The
/// objective is the mean of min(d^2, cutoff^2) over scene points, which the
/// iteration never increases; the best pose seen is returned.
IcpResult refine_icp(const PointCloud& scene, const PointCloud& model, const RigidTransform& init,
                     const IcpOptions& opts);

}  // namespace ppfpose
