#include "ppfpose/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <unordered_map>

#include <Eigen/Eigenvalues>
#include <json.hpp>

namespace ppfpose {

const char* to_string(CloudSource s) {
  switch (s) {
    case CloudSource::mesh_sampled: return "mesh_sampled";
    case CloudSource::depth_backprojected: return "depth_backprojected";
    case CloudSource::synthetic: return "synthetic";
  }
  return "unknown";
}

std::vector<Vec3> PointCloud::positions() const {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.position);
  return out;
}

void PointCloud::validate() const {
  for (size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!p.position.allFinite()) {
      throw PointCloudError("point " + std::to_string(i) + " has a non-finite position");
    }
    if (has_normals && std::abs(p.normal.norm() - 1.0) > 1e-6) {
      throw PointCloudError("point " + std::to_string(i) + " has a non-unit normal");
    }
  }
}

PointCloud transform_cloud(const PointCloud& cloud, const RigidTransform& t) {
  PointCloud out = cloud;
  for (auto& p : out.points) {
    p.position = t.apply(p.position);
    if (cloud.has_normals) p.normal = t.apply_direction(p.normal);
  }
  return out;
}

Mesh transform_mesh(const Mesh& mesh, const RigidTransform& t) {
  Mesh out = mesh;
  for (auto& v : out.vertices) v = t.apply(v);
  for (auto& n : out.vertex_normals) n = t.apply_direction(n);
  return out;
}

DepthImage::DepthImage(int w, int h)
    : width(w), height(h),
      depth(static_cast<size_t>(w) * static_cast<size_t>(h), std::numeric_limits<double>::quiet_NaN()) {
  if (w < 0 || h < 0) throw PointCloudError("negative image size");
}

bool DepthImage::valid(int x, int y) const {
  const double d = at(x, y);
  return std::isfinite(d) && d > 0.0;
}

size_t DepthImage::valid_count() const {
  return static_cast<size_t>(std::count_if(depth.begin(), depth.end(),
                                           [](double d) { return std::isfinite(d) && d > 0.0; }));
}

void CameraIntrinsics::validate() const {
  if (!(f > 0.0) || !std::isfinite(f)) throw PointCloudError("intrinsics: focal length must be > 0");
  if (!(baseline > 0.0) || !std::isfinite(baseline)) throw PointCloudError("intrinsics: baseline must be > 0");
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw PointCloudError("intrinsics: principal point must be finite");
  if (width < 0 || height < 0) throw PointCloudError("intrinsics: negative resolution");
}

Eigen::Vector2d CameraIntrinsics::project(const Vec3& p) const {
  return {f * p.x() / p.z() + cx, f * p.y() / p.z() + cy};
}

double disparity_to_depth(double disparity_px, const CameraIntrinsics& intr) {
  if (!(disparity_px > 0.0)) throw PointCloudError("disparity must be > 0");
  return intr.f * intr.baseline / disparity_px;
}

double depth_to_disparity(double depth_m, const CameraIntrinsics& intr) {
  if (!(depth_m > 0.0)) throw PointCloudError("depth must be > 0");
  return intr.f * intr.baseline / depth_m;
}

// ---------------------------------------------------------------------------
// PLY

namespace {

struct PlyProperty {
  std::string name;
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  size_t count = 0;
  std::vector<PlyProperty> props;
};

Vec3 bbox_min(std::span<const Vec3> pts) {
  Vec3 m = Vec3::Constant(std::numeric_limits<double>::infinity());
  for (const auto& p : pts) m = m.cwiseMin(p);
  return m;
}

Vec3 bbox_max(std::span<const Vec3> pts) {
  Vec3 m = Vec3::Constant(-std::numeric_limits<double>::infinity());
  for (const auto& p : pts) m = m.cwiseMax(p);
  return m;
}

}  // namespace

PlyData parse_ply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply") {
    throw PointCloudError("PLY: missing 'ply' magic line");
  }
  std::vector<PlyElement> elements;
  bool ascii = false;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw PointCloudError("PLY: only ASCII format is supported (got '" + fmt + "')");
      ascii = true;
    } else if (kw == "element") {
      PlyElement e;
      long long n = -1;
      ls >> e.name >> n;
      if (e.name.empty() || n < 0) throw PointCloudError("PLY: malformed element line: " + line);
      e.count = static_cast<size_t>(n);
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) throw PointCloudError("PLY: property before any element");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string ct, it;
        ls >> ct >> it;
        p.is_list = true;
      }
      ls >> p.name;
      if (p.name.empty()) throw PointCloudError("PLY: malformed property line: " + line);
      elements.back().props.push_back(p);
    } else if (kw == "end_header") {
      header_done = true;
      break;
    } else {
      throw PointCloudError("PLY: unexpected header keyword '" + kw + "'");
    }
  }
  if (!header_done) throw PointCloudError("PLY: missing end_header");
  if (!ascii) throw PointCloudError("PLY: missing format line");

  PlyData out;
  Mesh& mesh = out.mesh;
  bool have_vertex = false;
  for (const auto& e : elements) {
    if (e.name == "vertex") {
      have_vertex = true;
      int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
      for (size_t k = 0; k < e.props.size(); ++k) {
        const auto& n = e.props[k].name;
        const int ki = static_cast<int>(k);
        if (n == "x") ix = ki;
        else if (n == "y") iy = ki;
        else if (n == "z") iz = ki;
        else if (n == "nx") inx = ki;
        else if (n == "ny") iny = ki;
        else if (n == "nz") inz = ki;
      }
      if (ix < 0 || iy < 0 || iz < 0) throw PointCloudError("PLY: vertex element lacks x/y/z");
      const bool normals = inx >= 0 && iny >= 0 && inz >= 0;
      for (size_t i = 0; i < e.count; ++i) {
        if (!std::getline(in, line)) throw PointCloudError("PLY: truncated vertex data");
        std::istringstream ls(line);
        std::vector<double> vals(e.props.size());
        for (auto& v : vals) {
          if (!(ls >> v)) throw PointCloudError("PLY: malformed vertex line " + std::to_string(i));
        }
        mesh.vertices.emplace_back(vals[ix], vals[iy], vals[iz]);
        if (normals) {
          Vec3 n(vals[inx], vals[iny], vals[inz]);
          const double len = n.norm();
          mesh.vertex_normals.push_back(len > 0.0 ? Vec3(n / len) : Vec3::Zero());
        }
      }
    } else if (e.name == "face") {
      int list_idx = -1;
      for (size_t k = 0; k < e.props.size(); ++k) {
        if (e.props[k].is_list) list_idx = static_cast<int>(k);
      }
      for (size_t i = 0; i < e.count; ++i) {
        if (!std::getline(in, line)) throw PointCloudError("PLY: truncated face data");
        std::istringstream ls(line);
        std::vector<long long> idx;
        for (size_t k = 0; k < e.props.size(); ++k) {
          if (static_cast<int>(k) == list_idx) {
            long long cnt = 0;
            if (!(ls >> cnt) || cnt < 0) throw PointCloudError("PLY: malformed face line");
            for (long long c = 0; c < cnt; ++c) {
              long long v;
              if (!(ls >> v)) throw PointCloudError("PLY: malformed face line");
              idx.push_back(v);
            }
          } else {
            double skip;
            ls >> skip;
          }
        }
        // Fan triangulation of polygons.
        for (size_t t = 1; t + 1 < idx.size(); ++t) {
          mesh.faces.push_back({static_cast<uint32_t>(idx[0]), static_cast<uint32_t>(idx[t]),
                                static_cast<uint32_t>(idx[t + 1])});
        }
      }
    } else {
      for (size_t i = 0; i < e.count; ++i) std::getline(in, line);
    }
  }
  if (!have_vertex || mesh.vertices.empty()) throw PointCloudError("PLY: zero vertices");
  for (const auto& f : mesh.faces) {
    for (auto v : f) {
      if (v >= mesh.vertices.size()) throw PointCloudError("PLY: face references a missing vertex");
    }
  }
  for (const auto& v : mesh.vertices) {
    if (!v.allFinite()) throw PointCloudError("PLY: non-finite vertex");
  }

  if (bbox_diameter(std::span<const Vec3>(mesh.vertices)) > 10.0) {
    for (auto& v : mesh.vertices) v *= 1e-3;
    mesh.scaled_from_mm = true;
  }

  out.cloud.frame_id = "model";
  out.cloud.source = CloudSource::mesh_sampled;
  out.cloud.has_normals = mesh.has_normals();
  for (size_t i = 0; i < mesh.vertices.size(); ++i) {
    OrientedPoint p;
    p.position = mesh.vertices[i];
    if (mesh.has_normals()) p.normal = mesh.vertex_normals[i];
    out.cloud.points.push_back(p);
  }
  if (out.cloud.has_normals) {
    for (const auto& p : out.cloud.points) {
      if (p.normal.squaredNorm() == 0.0) {
        out.cloud.has_normals = false;
        break;
      }
    }
  }
  return out;
}

PlyData load_ply(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PointCloudError("cannot open PLY file: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse_ply(ss.str());
  } catch (const PointCloudError& e) {
    throw PointCloudError(path.string() + ": " + e.what());
  }
}

namespace {

void write_ply_impl(const std::filesystem::path& path, std::span<const Vec3> verts,
                    std::span<const Vec3> normals, std::span<const std::array<uint32_t, 3>> faces) {
  std::ofstream f(path);
  if (!f) throw PointCloudError("cannot write PLY file: " + path.string());
  f << "ply\nformat ascii 1.0\nelement vertex " << verts.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n";
  if (!normals.empty()) f << "property float nx\nproperty float ny\nproperty float nz\n";
  if (!faces.empty()) f << "element face " << faces.size() << "\nproperty list uchar int vertex_indices\n";
  f << "end_header\n";
  f << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (size_t i = 0; i < verts.size(); ++i) {
    f << verts[i].x() << ' ' << verts[i].y() << ' ' << verts[i].z();
    if (!normals.empty()) f << ' ' << normals[i].x() << ' ' << normals[i].y() << ' ' << normals[i].z();
    f << '\n';
  }
  for (const auto& t : faces) f << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

}  // namespace

void write_ply(const std::filesystem::path& path, const Mesh& mesh) {
  write_ply_impl(path, mesh.vertices, mesh.vertex_normals, mesh.faces);
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  std::vector<Vec3> normals;
  if (cloud.has_normals) {
    for (const auto& p : cloud.points) normals.push_back(p.normal);
  }
  write_ply_impl(path, cloud.positions(), normals, {});
}

// ---------------------------------------------------------------------------
// Depth files

DepthImage load_depth_pgm16(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PointCloudError("cannot open depth image: " + path.string());
  std::string magic;
  f >> magic;
  if (magic != "P5") throw PointCloudError(path.string() + ": not a binary PGM (P5)");
  auto next_int = [&]() {
    while (true) {
      f >> std::ws;
      if (f.peek() == '#') {
        std::string c;
        std::getline(f, c);
        continue;
      }
      long v;
      if (!(f >> v)) throw PointCloudError(path.string() + ": malformed PGM header");
      return v;
    }
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 255 || maxval > 65535) {
    throw PointCloudError(path.string() + ": expected a 16-bit PGM");
  }
  f.get();
  DepthImage img(static_cast<int>(w), static_cast<int>(h));
  std::vector<unsigned char> buf(static_cast<size_t>(w * h * 2));
  if (!f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw PointCloudError(path.string() + ": truncated PGM data");
  }
  for (size_t i = 0; i < img.depth.size(); ++i) {
    const unsigned v = (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1];
    img.depth[i] = v == 0 ? std::numeric_limits<double>::quiet_NaN() : v * 1e-3;
  }
  return img;
}

void save_depth_pgm16(const std::filesystem::path& path, const DepthImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw PointCloudError("cannot write depth image: " + path.string());
  f << "P5\n" << img.width << ' ' << img.height << "\n65535\n";
  std::vector<unsigned char> buf(img.depth.size() * 2);
  for (size_t i = 0; i < img.depth.size(); ++i) {
    const double d = img.depth[i];
    long mm = (std::isfinite(d) && d > 0.0) ? std::lround(d * 1e3) : 0;
    mm = std::clamp(mm, 0L, 65535L);
    buf[2 * i] = static_cast<unsigned char>(mm >> 8);
    buf[2 * i + 1] = static_cast<unsigned char>(mm & 0xff);
  }
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

DepthImage load_depth_raw(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PointCloudError("cannot open depth image: " + path.string());
  std::string header;
  std::getline(f, header);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw PointCloudError(path.string() + ": bad JSON header: " + e.what());
  }
  const int w = h.value("width", -1), ht = h.value("height", -1);
  const std::string unit = h.value("unit", "m");
  if (w <= 0 || ht <= 0) throw PointCloudError(path.string() + ": header needs positive width/height");
  double scale;
  if (unit == "m") scale = 1.0;
  else if (unit == "mm") scale = 1e-3;
  else throw PointCloudError(path.string() + ": unknown unit '" + unit + "'");
  DepthImage img(w, ht);
  std::vector<float> buf(img.depth.size());
  if (!f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw PointCloudError(path.string() + ": truncated depth data");
  }
  for (size_t i = 0; i < buf.size(); ++i) {
    const double d = buf[i];
    img.depth[i] = (std::isfinite(d) && d > 0.0) ? d * scale : std::numeric_limits<double>::quiet_NaN();
  }
  return img;
}

void save_depth_raw(const std::filesystem::path& path, const DepthImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw PointCloudError("cannot write depth image: " + path.string());
  nlohmann::json h = {{"width", img.width}, {"height", img.height}, {"unit", "m"}};
  f << h.dump() << '\n';
  std::vector<float> buf(img.depth.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(img.depth[i]);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

DepthImage load_depth(const std::filesystem::path& path) {
  if (path.extension() == ".pgm") return load_depth_pgm16(path);
  return load_depth_raw(path);
}

// ---------------------------------------------------------------------------
// Processing

PointCloud voxel_downsample(const PointCloud& cloud, double leaf) {
  if (!(leaf > 0.0) || !std::isfinite(leaf)) throw PointCloudError("voxel leaf size must be > 0");

  struct Accum {
    Vec3 pos = Vec3::Zero();
    Vec3 nrm = Vec3::Zero();
    size_t n = 0;
  };
  struct KeyHash {
    size_t operator()(const std::array<int64_t, 3>& k) const noexcept {
      uint64_t h = 1469598103934665603ull;
      for (auto v : k) h = (h ^ static_cast<uint64_t>(v)) * 1099511628211ull;
      return static_cast<size_t>(h);
    }
  };
  std::unordered_map<std::array<int64_t, 3>, size_t, KeyHash> index;
  std::vector<Accum> voxels;
  for (const auto& p : cloud.points) {
    const std::array<int64_t, 3> key{static_cast<int64_t>(std::floor(p.position.x() / leaf)),
                                     static_cast<int64_t>(std::floor(p.position.y() / leaf)),
                                     static_cast<int64_t>(std::floor(p.position.z() / leaf))};
    auto [it, inserted] = index.try_emplace(key, voxels.size());
    if (inserted) voxels.emplace_back();
    Accum& a = voxels[it->second];
    a.pos += p.position;
    a.nrm += p.normal;
    ++a.n;
  }

  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.source = cloud.source;
  out.has_normals = cloud.has_normals;
  out.points.reserve(voxels.size());
  for (const auto& a : voxels) {
    OrientedPoint p;
    p.position = a.pos / static_cast<double>(a.n);
    if (cloud.has_normals) {
      const Vec3 mean = a.nrm / static_cast<double>(a.n);
      if (mean.norm() < 1e-9) {
        throw PointCloudError("voxel_downsample: normals cancel inside a voxel; use a smaller leaf");
      }
      p.normal = mean.normalized();
    }
    out.points.push_back(p);
  }
  return out;
}

PointCloud estimate_normals(const PointCloud& cloud, int k, const Vec3& viewpoint) {
  if (k < 3) throw PointCloudError("estimate_normals: k must be >= 3");
  if (cloud.size() < static_cast<size_t>(k)) {
    throw PointCloudError("estimate_normals: cloud has " + std::to_string(cloud.size()) +
                          " points, fewer than k = " + std::to_string(k));
  }
  const KdTree tree(cloud.positions());
  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.source = cloud.source;
  out.has_normals = true;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    const auto nn = tree.knn(p.position, static_cast<size_t>(k));
    Vec3 mean = Vec3::Zero();
    for (auto i : nn) mean += tree.point(i);
    mean /= static_cast<double>(nn.size());
    Mat3 cov = Mat3::Zero();
    for (auto i : nn) {
      const Vec3 d = tree.point(i) - mean;
      cov += d * d.transpose();
    }
    const double scale = cov.trace();
    if (!(scale > 0.0)) continue;
    Eigen::SelfAdjointEigenSolver<Mat3> es;
    es.computeDirect(cov / scale);
    const auto& ev = es.eigenvalues();
    // Smallest two eigenvalues both ~0: the neighbourhood is a line or a point.
    if (ev(1) < 1e-12) continue;
    Vec3 n = es.eigenvectors().col(0).normalized();
    if (n.dot(viewpoint - p.position) < 0.0) n = -n;
    out.points.push_back({p.position, n});
  }
  return out;
}

PointCloud depth_to_cloud(const DepthImage& img, const CameraIntrinsics& intr, const std::string& frame_id) {
  intr.validate();
  PointCloud out;
  out.frame_id = frame_id;
  out.source = CloudSource::depth_backprojected;
  out.has_normals = false;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!img.valid(x, y)) continue;
      const double z = img.at(x, y);
      OrientedPoint p;
      p.position = Vec3((x - intr.cx) * z / intr.f, (y - intr.cy) * z / intr.f, z);
      out.points.push_back(p);
    }
  }
  if (out.empty()) throw PointCloudError("depth_to_cloud: image has no valid pixels");
  return out;
}

double bbox_diameter(const Vec3& dims) { return dims.norm(); }

Vec3 bbox_dims(std::span<const Vec3> points) {
  if (points.empty()) throw PointCloudError("bounding box of an empty point set");
  return bbox_max(points) - bbox_min(points);
}

double bbox_diameter(std::span<const Vec3> points) { return bbox_dims(points).norm(); }

double bbox_diameter(const PointCloud& cloud) {
  const auto pos = cloud.positions();
  return bbox_diameter(std::span<const Vec3>(pos));
}

PointCloud sample_mesh_surface(const Mesh& mesh, double spacing, uint64_t seed) {
  if (!(spacing > 0.0)) throw PointCloudError("sampling spacing must be > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  PointCloud out;
  out.frame_id = "model";
  out.source = CloudSource::mesh_sampled;
  out.has_normals = true;
  const double cell = spacing * spacing;
  for (const auto& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    const Vec3 cr = (b - a).cross(c - a);
    const double area = 0.5 * cr.norm();
    if (!(area > 0.0)) continue;
    const Vec3 n = cr.normalized();
    // Expected count area/cell; the fractional part is resolved stochastically.
    const double expected = area / cell;
    size_t count = static_cast<size_t>(expected);
    if (uni(rng) < expected - static_cast<double>(count)) ++count;
    for (size_t i = 0; i < count; ++i) {
      double u = uni(rng), v = uni(rng);
      if (u + v > 1.0) {
        u = 1.0 - u;
        v = 1.0 - v;
      }
      out.points.push_back({a + u * (b - a) + v * (c - a), n});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// KdTree

namespace {
constexpr uint32_t kLeafSize = 12;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  for (uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<uint32_t>(points_.size()));
  }
}

int32_t KdTree::build(uint32_t begin, uint32_t end) {
  const auto id = static_cast<int32_t>(nodes_.size());
  nodes_.emplace_back();
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis;
  (hi - lo).maxCoeff(&axis);
  if (hi(axis) - lo(axis) <= 0.0) return id;  // all coincident

  const uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](uint32_t a, uint32_t b) {
                     const double pa = points_[a](axis), pb = points_[b](axis);
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]](axis);
  const int32_t l = build(begin, mid);
  const int32_t r = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

std::vector<uint32_t> KdTree::knn(const Vec3& q, size_t k) const {
  k = std::min(k, points_.size());
  std::vector<std::pair<double, uint32_t>> best;  // max-heap on (dist, index)
  best.reserve(k + 1);
  if (k == 0) return {};

  auto visit = [&](auto&& self, int32_t id) -> void {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (uint32_t i = n.begin; i < n.end; ++i) {
        const uint32_t idx = order_[i];
        const std::pair<double, uint32_t> cand{(points_[idx] - q).squaredNorm(), idx};
        if (best.size() < k) {
          best.push_back(cand);
          std::push_heap(best.begin(), best.end());
        } else if (cand < best.front()) {
          std::pop_heap(best.begin(), best.end());
          best.back() = cand;
          std::push_heap(best.begin(), best.end());
        }
      }
      return;
    }
    const double diff = q(n.axis) - n.split;
    const int32_t first = diff < 0.0 ? n.left : n.right;
    const int32_t second = diff < 0.0 ? n.right : n.left;
    self(self, first);
    if (best.size() < k || diff * diff <= best.front().first) self(self, second);
  };
  visit(visit, 0);
  std::sort(best.begin(), best.end());
  std::vector<uint32_t> out;
  out.reserve(best.size());
  for (const auto& b : best) out.push_back(b.second);
  return out;
}

std::pair<uint32_t, double> KdTree::nearest(const Vec3& q) const {
  if (points_.empty()) throw PointCloudError("nearest-neighbour query on an empty tree");
  uint32_t best_i = 0;
  double best_d = std::numeric_limits<double>::infinity();
  auto visit = [&](auto&& self, int32_t id) -> void {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (uint32_t i = n.begin; i < n.end; ++i) {
        const uint32_t idx = order_[i];
        const double d = (points_[idx] - q).squaredNorm();
        if (d < best_d || (d == best_d && idx < best_i)) {
          best_d = d;
          best_i = idx;
        }
      }
      return;
    }
    const double diff = q(n.axis) - n.split;
    const int32_t first = diff < 0.0 ? n.left : n.right;
    const int32_t second = diff < 0.0 ? n.right : n.left;
    self(self, first);
    if (diff * diff <= best_d) self(self, second);
  };
  visit(visit, 0);
  return {best_i, best_d};
}

}  // namespace ppfpose
