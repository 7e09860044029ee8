#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppfpose/geometry.hpp"
#include "ppfpose/pointcloud.hpp"
#include "ppfpose/scene_prep.hpp"

namespace ppfpose {

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Rendering

struct RenderItem {
  const Mesh* mesh = nullptr;
  RigidTransform pose;  // mesh frame -> world
  uint16_t label = 0;   // written to the label image, 0 = background
};

struct RenderOutput {
  DepthImage depth;
  Image<uint16_t> labels;
};

/// Triangle z-buffer. Depth is the exact ray/triangle-plane intersection at
/// each pixel centre; nearer surfaces win. `camera_pose` maps camera -> world
/// (x right, y down, z forward).
RenderOutput render_depth(const std::vector<RenderItem>& items, const RigidTransform& camera_pose,
                          const CameraIntrinsics& intr);

/// Surface samples of `mesh` that are visible from at least one of `views`
/// viewpoints spread on a sphere around it.
PointCloud visible_surface_samples(const Mesh& mesh, double spacing, int views = 42, uint64_t seed = 7);

// ---------------------------------------------------------------------------
// Procedural objects

Mesh make_box(const Vec3& lo, const Vec3& hi);
// Closed cylinder between two points.
Mesh make_cylinder(const Vec3& a, const Vec3& b, double radius, int segments = 32);
Mesh make_sphere(const Vec3& center, double radius, int rings = 12, int segments = 24);
/// Square patch in the z = 0 plane facing +z.
Mesh make_plane(double size_x, double size_y);
void append_mesh(Mesh& dst, const Mesh& src);

struct ObjectClass {
  int class_id = 0;
  std::string name;
  Vec3 dims = Vec3::Zero();  // metres; z is the upright axis
  Mesh mesh;                 // centred on its bounding box
};

/// The nine tabletop stand-ins, class ids 1..9, each with fixed bounding-box
/// dimensions: teapot, drill, duck, box, glue, holep, iron, lamp, phone.
const std::vector<ObjectClass>& object_catalog();
const ObjectClass& catalog_object(int class_id);
const ObjectClass* find_catalog_object(const std::string& name);

// ---------------------------------------------------------------------------
// World

struct SimCamera {
  CameraIntrinsics intr;        // depth sensor
  int rgb_width = 0;
  int rgb_height = 0;
};

struct Placement {
  int class_id = 0;
  RigidTransform pose;          // object -> base
  std::string mesh_ref;         // "procedural:<name>" or a PLY path
};

struct SimWorld {
  std::vector<Placement> objects;
  std::map<std::string, Mesh> meshes;  // resolved mesh_ref -> mesh
  SimCamera top;
  SimCamera hand;
  Calibration calib;
  RigidTransform initial_flange;
  double noise_sigma = 0.0;
  uint64_t seed = 1;

  const Mesh& mesh_for(const Placement& p) const;
  // Resolves every mesh_ref not yet loaded.
  void resolve_meshes(const std::filesystem::path& base_dir = {});
};

/// Rig used by the built-in scenarios: oblique top camera over a work area
/// centred at (0.5, 0, 0) in the base frame, hand depth camera 320x240 offset
/// from the flange.
SimWorld default_world();

enum class CameraId { top, hand };

struct Capture {
  Image<uint16_t> rgb_stub;  // instance labels at depth resolution
  DepthImage depth;
  RigidTransform camera_pose;  // camera -> base at capture time
};

/// Renders every placed object from the requested camera. Gaussian depth
/// noise with world.noise_sigma is drawn from `rng` when sigma > 0.
Capture sim_capture(const SimWorld& world, CameraId camera, const RigidTransform& flange_pose,
                    std::mt19937_64& rng);

nlohmann::json world_to_json(const SimWorld& world);
SimWorld world_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
SimWorld load_world(const std::filesystem::path& path);
void save_world(const std::filesystem::path& path, const SimWorld& world);

nlohmann::json transform_to_json(const RigidTransform& t);
RigidTransform transform_from_json(const nlohmann::json& j);
nlohmann::json intrinsics_to_json(const CameraIntrinsics& c);
CameraIntrinsics intrinsics_from_json(const nlohmann::json& j);
nlohmann::json calibration_to_json(const Calibration& c);
Calibration calibration_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Robot

/// The arm carrying the hand camera, shared between the client (which moves
/// it) and the server (which captures through it).
class RobotLink {
 public:
  virtual ~RobotLink() = default;
  virtual RigidTransform flange_pose() const = 0;
  virtual void move_flange(const RigidTransform& pose) = 0;
};

/// In-memory arm; moves are instantaneous.
class SimRobot : public RobotLink {
 public:
  explicit SimRobot(const RigidTransform& start = {}) : pose_(start) {}
  RigidTransform flange_pose() const override;
  void move_flange(const RigidTransform& pose) override;

 private:
  mutable std::mutex mu_;
  RigidTransform pose_;
};

/// Arm state kept in a JSON file so separate client and server processes
/// can share it.
class FileRobot : public RobotLink {
 public:
  FileRobot(std::filesystem::path path, const RigidTransform& start);
  RigidTransform flange_pose() const override;
  void move_flange(const RigidTransform& pose) override;

 private:
  std::filesystem::path path_;
};

/// Deterministic sub-stream for (master seed, stream name, index).
uint64_t derive_seed(uint64_t master, std::string_view stream, uint64_t index = 0);

}  // namespace ppfpose
