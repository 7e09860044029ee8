#include "ppfpose/detect.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

namespace ppfpose {

namespace {

using nlohmann::json;

[[noreturn]] void schema_fail(const std::string& where, const std::string& what) {
  throw DetectionSchemaError(where + ": " + what);
}

double number_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) schema_fail(where, std::string("missing field '") + key + "'");
  if (!j[key].is_number()) schema_fail(where + "." + key, "must be a number");
  return j[key].get<double>();
}

size_t line_of_byte(const std::string& text, size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

bool queue_less(const Detection& a, const Detection& b) {
  if (a.class_id != b.class_id) return a.class_id < b.class_id;
  if (a.score != b.score) return a.score > b.score;
  const auto ca = a.bbox.center(), cb = b.bbox.center();
  if (ca.y() != cb.y()) return ca.y() < cb.y();
  if (ca.x() != cb.x()) return ca.x() < cb.x();
  // Fully tied records are interchangeable unless the box shapes differ.
  if (a.bbox.w != b.bbox.w) return a.bbox.w < b.bbox.w;
  return a.bbox.h < b.bbox.h;
}

}  // namespace

std::vector<int> PoseQueryQueue::classes() const {
  std::vector<int> out;
  for (const auto& d : items)
    if (out.empty() || out.back() != d.class_id) out.push_back(d.class_id);
  return out;
}

json detection_to_json(const Detection& d) {
  return json{{"class_id", d.class_id}, {"score", d.score}, {"bbox", {d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h}}};
}

Detection detection_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) schema_fail(where, "must be an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "class_id" && key != "score" && key != "bbox" && key != "mask")
      schema_fail(where, "unknown field '" + key + "'");
  }
  Detection d;
  if (!j.contains("class_id")) schema_fail(where, "missing field 'class_id'");
  if (!j["class_id"].is_number_integer()) schema_fail(where + ".class_id", "must be an integer");
  d.class_id = j["class_id"].get<int>();
  if (d.class_id < 1) schema_fail(where + ".class_id", "must be >= 1");

  d.score = number_field(j, "score", where);
  if (!(d.score >= 0.0 && d.score <= 1.0)) schema_fail(where + ".score", "must be in [0, 1]");

  if (!j.contains("bbox")) schema_fail(where, "missing field 'bbox'");
  const json& b = j["bbox"];
  if (!b.is_array() || b.size() != 4) schema_fail(where + ".bbox", "must be an array [x, y, w, h]");
  for (size_t i = 0; i < 4; ++i)
    if (!b[i].is_number()) schema_fail(where + ".bbox[" + std::to_string(i) + "]", "must be a number");
  d.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  if (!d.bbox.valid()) schema_fail(where + ".bbox", "needs finite values with w > 0 and h > 0");

  if (j.contains("mask") && !j["mask"].is_null()) {
    const json& m = j["mask"];
    if (!m.is_object() || !m.contains("width") || !m.contains("height") || !m.contains("data"))
      schema_fail(where + ".mask", "must be {width, height, data}");
    const int w = m["width"].get<int>(), h = m["height"].get<int>();
    if (w <= 0 || h <= 0) schema_fail(where + ".mask", "width and height must be positive");
    const json& data = m["data"];
    if (!data.is_array() || data.size() != static_cast<size_t>(w) * h)
      schema_fail(where + ".mask.data", "must hold width*height values");
    Image<uint8_t> img(w, h);
    for (size_t i = 0; i < data.size(); ++i) img.data[i] = data[i].get<int>() != 0 ? 1 : 0;
    d.mask = std::move(img);
  }
  return d;
}

std::vector<Detection> parse_detections(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DetectionSchemaError("line " + std::to_string(line_of_byte(text, e.byte)) + ": malformed JSON: " +
                               e.what());
  }
  if (!doc.is_array()) throw DetectionSchemaError("detections: top level must be a JSON array");
  std::vector<Detection> out;
  out.reserve(doc.size());
  for (size_t i = 0; i < doc.size(); ++i)
    out.push_back(detection_from_json(doc[i], "detections[" + std::to_string(i) + "]"));
  return out;
}

std::vector<Detection> load_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DetectionSchemaError("cannot open detections file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_detections(ss.str());
  } catch (const DetectionSchemaError& e) {
    throw DetectionSchemaError(path.string() + ": " + e.what());
  }
}

void save_detections(const std::filesystem::path& path, const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const auto& d : dets) arr.push_back(detection_to_json(d));
  std::ofstream out(path);
  if (!out) throw DetectionSchemaError("cannot write " + path.string());
  out << arr.dump(2) << "\n";
}

PoseQueryQueue group_and_sort(std::vector<Detection> dets) {
  std::stable_sort(dets.begin(), dets.end(), queue_less);
  return PoseQueryQueue{std::move(dets)};
}

PoseQueryQueue build_query_queue(std::vector<Detection> dets, const std::set<int>& known_classes,
                                 std::vector<Detection>* skipped) {
  std::vector<Detection> kept;
  for (auto& d : dets) {
    if (known_classes.count(d.class_id)) {
      kept.push_back(std::move(d));
    } else if (skipped) {
      skipped->push_back(std::move(d));
    }
  }
  return group_and_sort(std::move(kept));
}

std::string queue_bytes(const PoseQueryQueue& q) {
  json arr = json::array();
  for (const auto& d : q.items) arr.push_back(detection_to_json(d));
  return arr.dump();
}

std::vector<Detection> synthetic_detect(const SimWorld& world, const CameraIntrinsics& intr,
                                        const RigidTransform& camera_pose) {
  std::vector<Detection> out;
  const RigidTransform base_to_cam = camera_pose.inverse();
  for (const auto& p : world.objects) {
    const Mesh& mesh = world.mesh_for(p);
    if (mesh.vertices.empty()) continue;
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (const auto& v : mesh.vertices) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    const RigidTransform obj_to_cam = base_to_cam * p.pose;
    double u0 = std::numeric_limits<double>::infinity(), v0 = u0, u1 = -u0, v1 = -u0;
    bool behind = false;
    for (int c = 0; c < 8; ++c) {
      const Vec3 corner((c & 1) ? hi.x() : lo.x(), (c & 2) ? hi.y() : lo.y(), (c & 4) ? hi.z() : lo.z());
      const Vec3 q = obj_to_cam.apply(corner);
      if (q.z() <= 1e-6) {
        behind = true;
        break;
      }
      const Eigen::Vector2d px = intr.project(q);
      u0 = std::min(u0, px.x());
      u1 = std::max(u1, px.x());
      v0 = std::min(v0, px.y());
      v1 = std::max(v1, px.y());
    }
    if (behind) continue;
    const BBox2D box = BBox2D{u0, v0, u1 - u0, v1 - v0}.clamped(intr.width, intr.height);
    if (!box.valid()) continue;
    out.push_back(Detection{p.class_id, 1.0, box, std::nullopt});
  }
  return out;
}

std::vector<Detection> FileDetector::detect(const std::string&) { return load_detections(path_); }

std::vector<Detection> SyntheticDetector::detect(const std::string&) {
  if (!world_.calib.top_cam_to_base) throw DetectionSchemaError("synthetic detector needs top_cam_to_base");
  auto dets = synthetic_detect(world_, world_.top.intr, *world_.calib.top_cam_to_base);
  if (!roi_) return dets;
  std::vector<Detection> kept;
  for (auto& d : dets) {
    const auto c = d.bbox.center();
    if (c.x() >= roi_->x && c.x() < roi_->x + roi_->w && c.y() >= roi_->y && c.y() < roi_->y + roi_->h)
      kept.push_back(std::move(d));
  }
  return kept;
}

}  // namespace ppfpose
