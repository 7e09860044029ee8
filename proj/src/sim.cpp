#include "ppfpose/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace ppfpose {

namespace {

RigidTransform look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  Vec3 up = std::abs(z.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 x = up.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return RigidTransform(Rot3::orthonormalize(r), eye);
}

}  // namespace

// ---------------------------------------------------------------------------
// Rendering

RenderOutput render_depth(const std::vector<RenderItem>& items, const RigidTransform& camera_pose,
                          const CameraIntrinsics& intr) {
  intr.validate();
  RenderOutput out;
  out.depth = DepthImage(intr.width, intr.height);
  out.labels = Image<uint16_t>(intr.width, intr.height, 0);
  auto& zbuf = out.depth.depth;
  const RigidTransform world_to_cam = camera_pose.inverse();
  constexpr double kNear = 1e-3;

  std::vector<Vec3> cam_verts;
  for (const auto& item : items) {
    if (!item.mesh) continue;
    const RigidTransform to_cam = world_to_cam * item.pose;
    cam_verts.resize(item.mesh->vertices.size());
    for (size_t i = 0; i < cam_verts.size(); ++i) cam_verts[i] = to_cam.apply(item.mesh->vertices[i]);

    for (const auto& f : item.mesh->faces) {
      const Vec3& a = cam_verts[f[0]];
      const Vec3& b = cam_verts[f[1]];
      const Vec3& c = cam_verts[f[2]];
      if (a.z() < kNear || b.z() < kNear || c.z() < kNear) continue;
      const Vec3 n = (b - a).cross(c - a);
      const double plane_d = n.dot(a);
      if (plane_d == 0.0) continue;  // seen edge-on

      const Eigen::Vector2d pa = intr.project(a), pb = intr.project(b), pc = intr.project(c);
      const double area = (pb - pa).x() * (pc - pa).y() - (pb - pa).y() * (pc - pa).x();
      if (std::abs(area) < 1e-12) continue;
      const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({pa.x(), pb.x(), pc.x()}))));
      const int x1 = std::min(intr.width - 1, static_cast<int>(std::floor(std::max({pa.x(), pb.x(), pc.x()}))));
      const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({pa.y(), pb.y(), pc.y()}))));
      const int y1 = std::min(intr.height - 1, static_cast<int>(std::floor(std::max({pa.y(), pb.y(), pc.y()}))));
      if (x0 > x1 || y0 > y1) continue;

      auto edge = [](const Eigen::Vector2d& p, const Eigen::Vector2d& q, double x, double y) {
        return (q.x() - p.x()) * (y - p.y()) - (q.y() - p.y()) * (x - p.x());
      };
      const double sign = area > 0.0 ? 1.0 : -1.0;
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double e0 = sign * edge(pa, pb, x, y);
          const double e1 = sign * edge(pb, pc, x, y);
          const double e2 = sign * edge(pc, pa, x, y);
          if (e0 < 0.0 || e1 < 0.0 || e2 < 0.0) continue;
          const Vec3 ray((x - intr.cx) / intr.f, (y - intr.cy) / intr.f, 1.0);
          const double denom = n.dot(ray);
          if (denom == 0.0) continue;
          const double z = plane_d / denom;
          if (!(z > kNear)) continue;
          const size_t idx = static_cast<size_t>(y) * intr.width + x;
          const double cur = zbuf[idx];
          if (std::isnan(cur) || z < cur) {
            zbuf[idx] = z;
            out.labels.data[idx] = item.label;
          }
        }
      }
    }
  }
  return out;
}

PointCloud visible_surface_samples(const Mesh& mesh, double spacing, int views, uint64_t seed) {
  PointCloud dense = sample_mesh_surface(mesh, spacing, seed);
  if (dense.empty() || views <= 0) return dense;
  const Vec3 lo = [&] {
    Vec3 m = Vec3::Constant(std::numeric_limits<double>::infinity());
    for (const auto& v : mesh.vertices) m = m.cwiseMin(v);
    return m;
  }();
  const Vec3 hi = [&] {
    Vec3 m = Vec3::Constant(-std::numeric_limits<double>::infinity());
    for (const auto& v : mesh.vertices) m = m.cwiseMax(v);
    return m;
  }();
  const Vec3 center = (lo + hi) / 2.0;
  const double diam = (hi - lo).norm();
  const double tol = 0.02 * diam;

  CameraIntrinsics intr;
  intr.width = intr.height = 400;
  intr.f = 1000.0;
  intr.cx = intr.cy = 199.5;
  intr.baseline = 0.05;

  std::vector<char> seen(dense.size(), 0);
  const std::vector<RenderItem> items{{&mesh, RigidTransform::identity(), 1}};
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int v = 0; v < views; ++v) {
    const double zc = 1.0 - 2.0 * (v + 0.5) / views;
    const double r = std::sqrt(std::max(0.0, 1.0 - zc * zc));
    const Vec3 dir(r * std::cos(golden * v), r * std::sin(golden * v), zc);
    const Vec3 eye = center + 3.0 * diam * dir;
    const RigidTransform cam = look_at(eye, center);
    const RenderOutput ro = render_depth(items, cam, intr);
    const RigidTransform to_cam = cam.inverse();
    for (size_t i = 0; i < dense.size(); ++i) {
      if (seen[i]) continue;
      const auto& p = dense.points[i];
      if (p.normal.dot(eye - p.position) <= 0.0) continue;
      const Vec3 q = to_cam.apply(p.position);
      const Eigen::Vector2d px = intr.project(q);
      const int x = static_cast<int>(std::lround(px.x())), y = static_cast<int>(std::lround(px.y()));
      if (x < 0 || y < 0 || x >= intr.width || y >= intr.height) continue;
      const double zb = ro.depth.at(x, y);
      if (std::isfinite(zb) && q.z() <= zb + tol) seen[i] = 1;
    }
  }
  PointCloud out;
  out.frame_id = dense.frame_id;
  out.source = dense.source;
  out.has_normals = true;
  for (size_t i = 0; i < dense.size(); ++i)
    if (seen[i]) out.points.push_back(dense.points[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Procedural meshes

void append_mesh(Mesh& dst, const Mesh& src) {
  const auto base = static_cast<uint32_t>(dst.vertices.size());
  dst.vertices.insert(dst.vertices.end(), src.vertices.begin(), src.vertices.end());
  for (auto f : src.faces) dst.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
}

Mesh make_box(const Vec3& lo, const Vec3& hi) {
  Mesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
  }
  // Outward-facing (counter-clockwise seen from outside).
  m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

Mesh make_cylinder(const Vec3& a, const Vec3& b, double radius, int segments) {
  const Vec3 axis = (b - a).normalized();
  const Vec3 u = (std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY()).cross(axis).normalized();
  const Vec3 v = axis.cross(u);
  Mesh m;
  for (int i = 0; i < segments; ++i) {
    const double t = 2.0 * M_PI * i / segments;
    const Vec3 off = radius * (std::cos(t) * u + std::sin(t) * v);
    m.vertices.push_back(a + off);
    m.vertices.push_back(b + off);
  }
  const auto ca = static_cast<uint32_t>(m.vertices.size());
  m.vertices.push_back(a);
  m.vertices.push_back(b);
  const auto n = static_cast<uint32_t>(segments);
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t j = (i + 1) % n;
    const uint32_t a0 = 2 * i, b0 = 2 * i + 1, a1 = 2 * j, b1 = 2 * j + 1;
    m.faces.push_back({a0, a1, b0});
    m.faces.push_back({b0, a1, b1});
    m.faces.push_back({ca, a1, a0});
    m.faces.push_back({ca + 1, b0, b1});
  }
  return m;
}

Mesh make_sphere(const Vec3& center, double radius, int rings, int segments) {
  Mesh m;
  for (int r = 0; r <= rings; ++r) {
    const double phi = M_PI * r / rings;
    for (int s = 0; s < segments; ++s) {
      const double th = 2.0 * M_PI * s / segments;
      m.vertices.push_back(center + radius * Vec3(std::sin(phi) * std::cos(th), std::sin(phi) * std::sin(th),
                                                  std::cos(phi)));
    }
  }
  const auto S = static_cast<uint32_t>(segments);
  for (uint32_t r = 0; r < static_cast<uint32_t>(rings); ++r) {
    for (uint32_t s = 0; s < S; ++s) {
      const uint32_t s1 = (s + 1) % S;
      const uint32_t i00 = r * S + s, i01 = r * S + s1, i10 = (r + 1) * S + s, i11 = (r + 1) * S + s1;
      if (r != 0) m.faces.push_back({i00, i10, i01});
      if (r + 1 != static_cast<uint32_t>(rings)) m.faces.push_back({i01, i10, i11});
    }
  }
  return m;
}

Mesh make_plane(double size_x, double size_y) {
  Mesh m;
  m.vertices = {{-size_x / 2, -size_y / 2, 0}, {size_x / 2, -size_y / 2, 0},
                {-size_x / 2, size_y / 2, 0},  {size_x / 2, size_y / 2, 0}};
  m.faces = {{0, 1, 2}, {1, 3, 2}};
  return m;
}

namespace {

// Builders take millimetres for readability.
constexpr double kMm = 1e-3;

Mesh box_mm(double x0, double x1, double y0, double y1, double z0, double z1) {
  return make_box(Vec3(x0, y0, z0) * kMm, Vec3(x1, y1, z1) * kMm);
}
Mesh cyl_mm(const Vec3& a, const Vec3& b, double r) { return make_cylinder(a * kMm, b * kMm, r * kMm); }
Mesh sphere_mm(const Vec3& c, double r) { return make_sphere(c * kMm, r * kMm); }

ObjectClass assemble(int id, std::string name, const Vec3& dims_mm, std::initializer_list<Mesh> parts) {
  ObjectClass oc;
  oc.class_id = id;
  oc.name = std::move(name);
  oc.dims = dims_mm * kMm;
  for (const auto& p : parts) append_mesh(oc.mesh, p);
  // Parts are laid out inside [-dims/2, dims/2]; snap the bounding box centre
  // to the origin so round-off in the builders cannot shift the frame.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& v : oc.mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 c = (lo + hi) / 2.0;
  for (auto& v : oc.mesh.vertices) v -= c;
  return oc;
}

std::vector<ObjectClass> build_catalog() {
  std::vector<ObjectClass> cat;
  cat.push_back(assemble(1, "teapot", {153, 92, 114},
                         {cyl_mm({-10, 0, -57}, {-10, 0, 37}, 46), box_mm(36, 76.5, -8, 8, 0, 25),
                          box_mm(-76.5, -56, -6, 6, -30, 20), cyl_mm({-10, 0, 37}, {-10, 0, 57}, 12)}));
  cat.push_back(assemble(2, "drill", {203, 54, 169},
                         {box_mm(-101.5, 60, -27, 17, 30, 84.5), cyl_mm({60, -5, 57}, {101.5, -5, 57}, 15),
                          cyl_mm({-50, 17, 57}, {-50, 27, 57}, 18), box_mm(-70, -30, -18, 14, -50, 30),
                          box_mm(-30, -18, -6, 6, 0, 20), box_mm(-90, 0, -27, 27, -84.5, -50)}));
  cat.push_back(assemble(3, "duck", {101, 91, 90},
                         {sphere_mm({-10, 0, -10}, 35), sphere_mm({20, 0, 27}, 18), box_mm(38, 50.5, -6, 6, 20, 30),
                          box_mm(-50.5, -40, -8, 8, 0, 15), box_mm(-30, 10, -45.5, 45.5, -20, 0),
                          box_mm(-25, 5, -20, 20, -45, -35)}));
  cat.push_back(assemble(4, "box", {145, 85, 216},
                         {box_mm(-72.5, 72.5, -42.5, 25, -108, 95), box_mm(10, 60, 25, 42.5, 20, 100),
                          cyl_mm({-35, -10, 95}, {-35, -10, 108}, 18)}));
  cat.push_back(assemble(5, "glue", {53, 93, 33},
                         {box_mm(-26.5, 26.5, -46.5, 25, -16.5, 10), cyl_mm({-8, 25, -4}, {-8, 46.5, -4}, 12),
                          box_mm(0, 20, -40, -10, 10, 16.5)}));
  cat.push_back(assemble(6, "holep", {125, 83, 111},
                         {box_mm(-62.5, 62.5, -41.5, 41.5, -55.5, -35), box_mm(-62.5, 20, -30, 30, -35, 10),
                          box_mm(-50, 62.5, -20, 20, 10, 30), cyl_mm({-45, -25, 40}, {-45, 25, 40}, 15.5)}));
  cat.push_back(assemble(7, "iron", {241, 116, 160},
                         {box_mm(-120.5, 80, -58, 58, -80, -50), box_mm(80, 120.5, -30, 30, -80, -60),
                          box_mm(-100, 60, -45, 45, -50, 0), cyl_mm({-90, 0, 65}, {50, 0, 65}, 15),
                          box_mm(-95, -75, -12, 12, 0, 50), box_mm(30, 50, -12, 12, 0, 50)}));
  cat.push_back(assemble(8, "lamp", {163, 182, 230},
                         {box_mm(-81.5, 20, -91, 10, -115, -100), cyl_mm({-40, -40, -100}, {-40, -40, 90}, 8),
                          box_mm(-48, 81.5, -45, -35, 80, 95), box_mm(30, 81.5, -35, 91, 60, 115)}));
  cat.push_back(assemble(9, "phone", {95, 191, 231},
                         {box_mm(-47.5, 47.5, -95.5, 95.5, -115.5, -60), box_mm(-47.5, 20, -95.5, 40, -60, 60),
                          cyl_mm({0, -95.5, 80}, {0, 60, 80}, 20), box_mm(-20, 20, 40, 95.5, 90, 115.5)}));
  return cat;
}

}  // namespace

const std::vector<ObjectClass>& object_catalog() {
  static const std::vector<ObjectClass> cat = build_catalog();
  return cat;
}

const ObjectClass& catalog_object(int class_id) {
  for (const auto& o : object_catalog())
    if (o.class_id == class_id) return o;
  throw SimError("no catalog object with class id " + std::to_string(class_id));
}

const ObjectClass* find_catalog_object(const std::string& name) {
  for (const auto& o : object_catalog())
    if (o.name == name) return &o;
  return nullptr;
}

// ---------------------------------------------------------------------------
// World

const Mesh& SimWorld::mesh_for(const Placement& p) const {
  auto it = meshes.find(p.mesh_ref);
  if (it == meshes.end()) throw SimError("mesh not resolved: " + p.mesh_ref);
  return it->second;
}

void SimWorld::resolve_meshes(const std::filesystem::path& base_dir) {
  static const std::string kProc = "procedural:";
  for (const auto& p : objects) {
    if (meshes.count(p.mesh_ref)) continue;
    if (p.mesh_ref.rfind(kProc, 0) == 0) {
      const auto* oc = find_catalog_object(p.mesh_ref.substr(kProc.size()));
      if (!oc) throw SimError("unknown procedural mesh: " + p.mesh_ref);
      meshes[p.mesh_ref] = oc->mesh;
    } else {
      std::filesystem::path path(p.mesh_ref);
      if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
      meshes[p.mesh_ref] = load_ply(path).mesh;
    }
  }
}

SimWorld default_world() {
  SimWorld w;
  w.top.intr = {1075.0, 639.5, 479.5, 0.065, 1280, 960};
  w.top.rgb_width = 1280;
  w.top.rgb_height = 960;
  w.hand.intr = {170.0, 159.5, 119.5, 0.05, 320, 240};
  w.hand.rgb_width = 640;
  w.hand.rgb_height = 480;
  // Top camera behind and above the work area, looking down at about 35
  // degrees from vertical so the hand camera approaches objects obliquely.
  // Image rows run towards the table (camera y has a downward component).
  const RigidTransform top = look_at(Vec3(0.0, 0.0, 0.9), Vec3(0.5, 0.0, 0.1));
  w.calib.top_cam_to_base = top * RigidTransform(Rot3::about_z(M_PI), Vec3::Zero());
  w.calib.hand_cam_to_flange = RigidTransform(Rot3::about_z(M_PI / 2.0), Vec3(0.0, 0.05, 0.03));
  w.calib.top_intrinsics = w.top.intr;
  w.calib.hand_intrinsics = w.hand.intr;
  w.calib.standoff = 0.2;
  w.calib.margin = 1.5;
  w.initial_flange = RigidTransform(Rot3::about_x(M_PI), Vec3(0.3, 0.0, 0.7));
  return w;
}

Capture sim_capture(const SimWorld& world, CameraId camera, const RigidTransform& flange_pose,
                    std::mt19937_64& rng) {
  Capture cap;
  const SimCamera& cam = camera == CameraId::top ? world.top : world.hand;
  if (camera == CameraId::top) {
    if (!world.calib.top_cam_to_base) throw SimError("world lacks top_cam_to_base");
    cap.camera_pose = *world.calib.top_cam_to_base;
  } else {
    if (!world.calib.hand_cam_to_flange) throw SimError("world lacks hand_cam_to_flange");
    cap.camera_pose = flange_pose * *world.calib.hand_cam_to_flange;
  }
  std::vector<RenderItem> items;
  for (size_t i = 0; i < world.objects.size(); ++i) {
    items.push_back({&world.mesh_for(world.objects[i]), world.objects[i].pose, static_cast<uint16_t>(i + 1)});
  }
  RenderOutput ro = render_depth(items, cap.camera_pose, cam.intr);
  if (world.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, world.noise_sigma);
    for (auto& d : ro.depth.depth) {
      if (std::isfinite(d)) d = std::max(1e-4, d + noise(rng));
    }
  }
  cap.depth = std::move(ro.depth);
  cap.rgb_stub = std::move(ro.labels);
  return cap;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json transform_to_json(const RigidTransform& t) {
  const auto v = t.to_row_major();
  return nlohmann::json(std::vector<double>(v.begin(), v.end()));
}

RigidTransform transform_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 16) throw SimError("transform must be an array of 16 numbers (row-major 4x4)");
  std::array<double, 16> v{};
  for (size_t i = 0; i < 16; ++i) {
    if (!j[i].is_number()) throw SimError("transform entries must be numbers");
    v[i] = j[i].get<double>();
  }
  try {
    return RigidTransform::from_row_major(v);
  } catch (const GeometryError& e) {
    throw SimError(std::string("invalid transform: ") + e.what());
  }
}

nlohmann::json intrinsics_to_json(const CameraIntrinsics& c) {
  return {{"f", c.f}, {"cx", c.cx}, {"cy", c.cy}, {"baseline", c.baseline}, {"width", c.width}, {"height", c.height}};
}

CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> keys{"f", "cx", "cy", "baseline", "width", "height"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw SimError("intrinsics: unknown key '" + k + "'");
  }
  CameraIntrinsics c;
  try {
    c.f = j.at("f").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.baseline = j.at("baseline").get<double>();
    c.width = j.value("width", 0);
    c.height = j.value("height", 0);
  } catch (const nlohmann::json::exception& e) {
    throw SimError(std::string("intrinsics: ") + e.what());
  }
  try {
    c.validate();
  } catch (const PointCloudError& e) {
    throw SimError(e.what());
  }
  return c;
}

nlohmann::json calibration_to_json(const Calibration& c) {
  nlohmann::json j;
  if (c.top_cam_to_base) j["top_cam_to_base"] = transform_to_json(*c.top_cam_to_base);
  if (c.hand_cam_to_flange) j["hand_cam_to_flange"] = transform_to_json(*c.hand_cam_to_flange);
  j["intrinsics"] = {{"top", intrinsics_to_json(c.top_intrinsics)}, {"hand", intrinsics_to_json(c.hand_intrinsics)}};
  j["standoff"] = c.standoff;
  j["margin"] = c.margin;
  return j;
}

Calibration calibration_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> keys{"top_cam_to_base", "hand_cam_to_flange", "intrinsics", "standoff",
                                             "margin"};
  if (!j.is_object()) throw SimError("calibration must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw SimError("calibration: unknown key '" + k + "'");
  }
  Calibration c;
  if (j.contains("top_cam_to_base")) c.top_cam_to_base = transform_from_json(j["top_cam_to_base"]);
  if (j.contains("hand_cam_to_flange")) c.hand_cam_to_flange = transform_from_json(j["hand_cam_to_flange"]);
  if (j.contains("intrinsics")) {
    const auto& in = j["intrinsics"];
    if (in.contains("top")) c.top_intrinsics = intrinsics_from_json(in["top"]);
    if (in.contains("hand")) c.hand_intrinsics = intrinsics_from_json(in["hand"]);
  }
  c.standoff = j.value("standoff", 0.2);
  c.margin = j.value("margin", 1.5);
  if (!(c.standoff >= 0.0)) throw SimError("calibration: standoff must be >= 0");
  if (!(c.margin >= 1.0)) throw SimError("calibration: margin must be >= 1");
  return c;
}

namespace {

nlohmann::json camera_to_json(const SimCamera& c) {
  return {{"intrinsics", intrinsics_to_json(c.intr)}, {"rgb_width", c.rgb_width}, {"rgb_height", c.rgb_height}};
}

SimCamera camera_from_json(const nlohmann::json& j) {
  SimCamera c;
  c.intr = intrinsics_from_json(j.at("intrinsics"));
  c.rgb_width = j.value("rgb_width", c.intr.width);
  c.rgb_height = j.value("rgb_height", c.intr.height);
  return c;
}

std::vector<Placement> placements_from_json(const nlohmann::json& arr) {
  std::vector<Placement> out;
  for (const auto& o : arr) {
    Placement p;
    p.class_id = o.at("class_id").get<int>();
    if (p.class_id < 1) throw SimError("world: class_id must be >= 1");
    p.pose = transform_from_json(o.at("pose"));
    p.mesh_ref = o.value("mesh", "procedural:" + catalog_object(p.class_id).name);
    out.push_back(p);
  }
  return out;
}

}  // namespace

nlohmann::json world_to_json(const SimWorld& w) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& p : w.objects) {
    objs.push_back({{"class_id", p.class_id}, {"pose", transform_to_json(p.pose)}, {"mesh", p.mesh_ref}});
  }
  return {{"objects", objs},
          {"top_camera", camera_to_json(w.top)},
          {"hand_camera", camera_to_json(w.hand)},
          {"calibration", calibration_to_json(w.calib)},
          {"initial_flange", transform_to_json(w.initial_flange)},
          {"noise_sigma", w.noise_sigma},
          {"seed", w.seed}};
}

SimWorld world_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  SimWorld w = default_world();
  try {
    if (j.is_array()) {
      w.objects = placements_from_json(j);
    } else if (j.is_object()) {
      static const std::vector<std::string> keys{"objects",        "top_camera",  "hand_camera", "calibration",
                                                 "initial_flange", "noise_sigma", "seed"};
      for (const auto& [k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw SimError("world: unknown key '" + k + "'");
      }
      w.objects = placements_from_json(j.at("objects"));
      if (j.contains("top_camera")) w.top = camera_from_json(j["top_camera"]);
      if (j.contains("hand_camera")) w.hand = camera_from_json(j["hand_camera"]);
      if (j.contains("calibration")) {
        w.calib = calibration_from_json(j["calibration"]);
        if (!j["calibration"].contains("intrinsics")) {
          w.calib.top_intrinsics = w.top.intr;
          w.calib.hand_intrinsics = w.hand.intr;
        }
      } else {
        w.calib.top_intrinsics = w.top.intr;
        w.calib.hand_intrinsics = w.hand.intr;
      }
      if (j.contains("initial_flange")) w.initial_flange = transform_from_json(j["initial_flange"]);
      w.noise_sigma = j.value("noise_sigma", 0.0);
      w.seed = j.value("seed", uint64_t{1});
    } else {
      throw SimError("world file must be a JSON array or object");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SimError(std::string("world: ") + e.what());
  }
  w.resolve_meshes(base_dir);
  return w;
}

SimWorld load_world(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw SimError("cannot open world file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw SimError(path.string() + ": " + e.what());
  }
  return world_from_json(j, path.parent_path());
}

void save_world(const std::filesystem::path& path, const SimWorld& world) {
  std::ofstream f(path);
  if (!f) throw SimError("cannot write world file: " + path.string());
  f << world_to_json(world).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Robot

RigidTransform SimRobot::flange_pose() const {
  std::lock_guard lock(mu_);
  return pose_;
}

void SimRobot::move_flange(const RigidTransform& pose) {
  std::lock_guard lock(mu_);
  pose_ = pose;
}

FileRobot::FileRobot(std::filesystem::path path, const RigidTransform& start) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) move_flange(start);
}

RigidTransform FileRobot::flange_pose() const {
  std::ifstream f(path_);
  if (!f) throw SimError("cannot read robot state: " + path_.string());
  try {
    return transform_from_json(nlohmann::json::parse(f).at("flange"));
  } catch (const nlohmann::json::exception& e) {
    throw SimError("robot state " + path_.string() + ": " + e.what());
  }
}

void FileRobot::move_flange(const RigidTransform& pose) {
  const auto tmp = path_.string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw SimError("cannot write robot state: " + tmp);
    f << nlohmann::json{{"flange", transform_to_json(pose)}}.dump() << '\n';
  }
  std::filesystem::rename(tmp, path_);
}

uint64_t derive_seed(uint64_t master, std::string_view stream, uint64_t index) {
  uint64_t h = 1469598103934665603ull ^ master;
  for (char c : stream) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
  h ^= index + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

}  // namespace ppfpose
