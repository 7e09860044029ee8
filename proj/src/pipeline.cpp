#include "ppfpose/pipeline.hpp"

#include <array>
#include <chrono>

#include "ppfpose/scene_prep.hpp"
#include "ppfpose/sim.hpp"

namespace ppfpose {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Downsamples each dominant-normal class (+x, -x, +y, ...) on its own so that
// opposite faces of a part thinner than the leaf never share a voxel.
PointCloud downsample_by_orientation(const PointCloud& dense, double leaf) {
  std::array<PointCloud, 6> classes;
  for (auto& c : classes) {
    c.frame_id = dense.frame_id;
    c.source = dense.source;
    c.has_normals = true;
  }
  for (const auto& p : dense.points) {
    Eigen::Index axis = 0;
    p.normal.cwiseAbs().maxCoeff(&axis);
    classes[static_cast<size_t>(2 * axis + (p.normal[axis] < 0.0 ? 1 : 0))].points.push_back(p);
  }
  PointCloud out;
  out.frame_id = dense.frame_id;
  out.source = dense.source;
  out.has_normals = true;
  for (const auto& c : classes) {
    if (c.empty()) continue;
    const PointCloud d = voxel_downsample(c, leaf);
    out.points.insert(out.points.end(), d.points.begin(), d.points.end());
  }
  return out;
}

ModelFeatureSpace finish_training(const PointCloud& dense, double diameter, const TrainOptions& opts,
                                  TrainStats* stats, Clock::time_point t0) {
  if (dense.size() < 2) throw PpfError("model surface sampling produced fewer than 2 points");
  const double leaf = opts.leaf_rel * diameter;
  PointCloud model = downsample_by_orientation(dense, leaf);
  model.frame_id = "model";
  auto space = build_model_space(model, opts.params, diameter);
  if (stats) {
    stats->dense_points = dense.size();
    stats->model_points = space.model_size();
    stats->keys = space.table.key_count();
    stats->entries = space.table.entry_count();
    stats->load_factor = space.table.load_factor();
    stats->build_ms = ms_since(t0);
  }
  return space;
}

}  // namespace

ModelFeatureSpace train_model(const Mesh& mesh, const TrainOptions& opts, TrainStats* stats) {
  const auto t0 = Clock::now();
  if (mesh.faces.empty()) throw PpfError("mesh has no faces to sample");
  const double diameter = bbox_diameter(std::span<const Vec3>(mesh.vertices));
  if (!(diameter > 0.0)) throw PpfError("mesh has zero extent");
  // Dense enough that every voxel averages several samples.
  const double spacing = opts.leaf_rel * diameter / 4.0;
  const PointCloud dense =
      opts.visibility_filter ? visible_surface_samples(mesh, spacing) : sample_mesh_surface(mesh, spacing);
  return finish_training(dense, diameter, opts, stats, t0);
}

ModelFeatureSpace train_model(const PointCloud& cloud, const TrainOptions& opts, TrainStats* stats) {
  const auto t0 = Clock::now();
  if (!cloud.has_normals) throw PpfError("model cloud has no normals; estimate them first");
  return finish_training(cloud, bbox_diameter(cloud), opts, stats, t0);
}

PointCloud prepare_scene(const PointCloud& raw, const ModelFeatureSpace& space, const EstimateOptions& opts,
                         PoseEstimate* info) {
  const PointCloud* input = &raw;
  PointCloud cropped;
  if (opts.crop_seed) {
    try {
      cropped = crop_cloud(raw, *opts.crop_seed, opts.crop_dims, opts.margin);
      input = &cropped;
      if (info) info->cropped = true;
    } catch (const CropEmptyError& e) {
      if (info) info->crop_fallback = e.what();
    }
  }
  PointCloud oriented = *input;
  if (!input->has_normals) {
    oriented = estimate_normals(*input, opts.normal_k, opts.viewpoint);
    // Silhouette points seen edge-on get unreliable normals whose sign is
    // decided by round-off.
    std::erase_if(oriented.points, [&](const OrientedPoint& p) {
      const Vec3 ray = opts.viewpoint - p.position;
      return p.normal.dot(ray) < opts.min_view_cos * ray.norm();
    });
  }
  return voxel_downsample(oriented, opts.leaf_rel * space.model_diameter);
}

PoseEstimate estimate_pose(const PointCloud& raw_scene, const ModelFeatureSpace& space,
                           const EstimateOptions& opts) {
  const auto t0 = Clock::now();
  PoseEstimate est;
  const PointCloud scene = prepare_scene(raw_scene, space, opts, &est);
  est.scene_points = scene.size();
  if (scene.empty()) throw NoHypothesisError("scene is empty after preprocessing");

  const auto tm = Clock::now();
  const auto hyps = match(scene, space, opts.match);
  est.match_ms = ms_since(tm);
  est.hypotheses = hyps.size();
  if (hyps.empty()) throw NoHypothesisError("matching produced no pose hypothesis");

  est.pose = hyps.front().pose;
  est.votes = hyps.front().votes;
  if (opts.refine) {
    IcpOptions icp;
    icp.cutoff = 2.0 * opts.leaf_rel * space.model_diameter;
    // Refine the strongest clusters and keep the best fit; near-symmetric
    // objects often put a flipped pose within a few votes of the right one.
    const size_t k = std::min(hyps.size(), static_cast<size_t>(std::max(1, opts.verify_top_k)));
    for (size_t i = 0; i < k; ++i) {
      try {
        const auto r = refine_icp(scene, space.model_cloud, hyps[i].pose, icp);
        if (!est.refined || r.mse < est.icp_mse) {
          est.pose = r.pose;
          est.votes = hyps[i].votes;
          est.icp_mse = r.mse;
          est.rank = i;
          est.refined = true;
        }
      } catch (const RefineFailedError&) {
      }
    }
  }
  est.total_ms = ms_since(t0);
  return est;
}

}  // namespace ppfpose
