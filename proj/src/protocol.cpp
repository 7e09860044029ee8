#include "ppfpose/protocol.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ppfpose/pointcloud.hpp"

namespace ppfpose {

namespace {

using nlohmann::json;

[[noreturn]] void shape_fail(int id, const std::string& what) {
  throw ProtocolError("msg " + std::to_string(id) + ": " + what);
}

void expect_keys(const json& j, int id, std::initializer_list<const char*> keys) {
  for (const auto& [key, _] : j.items()) {
    if (key == "msg_id") continue;
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) shape_fail(id, "unexpected field '" + key + "'");
  }
  for (const char* k : keys)
    if (!j.contains(k)) shape_fail(id, std::string("missing field '") + k + "'");
}

int class_field(const json& j, int id) {
  const json& c = j["class_id"];
  if (!c.is_number_integer()) shape_fail(id, "class_id must be an integer");
  const auto v = c.get<int64_t>();
  if (v < 1 || v > std::numeric_limits<int>::max()) shape_fail(id, "class_id must be >= 1");
  return static_cast<int>(v);
}

template <size_t N>
std::array<double, N> number_array(const json& j, const char* key, int id) {
  const json& a = j[key];
  if (!a.is_array() || a.size() != N)
    shape_fail(id, std::string(key) + " must be an array of " + std::to_string(N) + " numbers");
  std::array<double, N> out{};
  for (size_t i = 0; i < N; ++i) {
    if (!a[i].is_number()) shape_fail(id, std::string(key) + " must hold numbers");
    out[i] = a[i].get<double>();
    if (!std::isfinite(out[i])) shape_fail(id, std::string(key) + " must be finite");
  }
  return out;
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Codec

std::string encode(const ProtocolMessage& m) {
  json j;
  j["msg_id"] = msg_id(m);
  std::visit(
      [&j](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, ErrorReply>) {
          j["error"] = v.error;
        } else if constexpr (std::is_same_v<T, CaptureReply>) {
          j["capture_ref"] = v.capture_ref;
        } else if constexpr (std::is_same_v<T, TargetRequest>) {
          j["class_id"] = v.class_id;
          j["bbox"] = {v.bbox.x, v.bbox.y, v.bbox.w, v.bbox.h};
          j["center"] = {v.center.x(), v.center.y()};
        } else if constexpr (std::is_same_v<T, TargetReply>) {
          j["location"] = vec_json(v.location);
        } else if constexpr (std::is_same_v<T, ArrivalConfirm>) {
          j["class_id"] = v.class_id;
        } else if constexpr (std::is_same_v<T, PoseReply>) {
          j["translation"] = vec_json(v.translation);
          j["rotation"] = {v.rotation.rx, v.rotation.ry, v.rotation.rz};
        }
      },
      m);
  return j.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
}

ProtocolMessage decode(std::string_view frame) {
  while (!frame.empty() && (frame.back() == '\n' || frame.back() == '\r')) frame.remove_suffix(1);
  if (frame.find('\n') != std::string_view::npos) throw ProtocolError("frame holds more than one line");
  json j;
  try {
    j = json::parse(frame);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("frame must be a JSON object");
  if (!j.contains("msg_id")) throw ProtocolError("missing msg_id");
  if (!j["msg_id"].is_number_integer()) throw ProtocolError("msg_id must be an integer");
  const auto id64 = j["msg_id"].get<int64_t>();
  if (id64 < 0 || id64 > 6) throw ProtocolError("unknown msg_id " + std::to_string(id64));
  const int id = static_cast<int>(id64);

  switch (id) {
    case 0: {
      expect_keys(j, id, {"error"});
      if (!j["error"].is_string()) shape_fail(id, "error must be a string");
      return ErrorReply{j["error"].get<std::string>()};
    }
    case 1:
      expect_keys(j, id, {});
      return CaptureRequest{};
    case 2: {
      expect_keys(j, id, {"capture_ref"});
      if (!j["capture_ref"].is_string() || j["capture_ref"].get<std::string>().empty())
        shape_fail(id, "capture_ref must be a non-empty string");
      return CaptureReply{j["capture_ref"].get<std::string>()};
    }
    case 3: {
      expect_keys(j, id, {"class_id", "bbox", "center"});
      TargetRequest r;
      r.class_id = class_field(j, id);
      const auto b = number_array<4>(j, "bbox", id);
      r.bbox = {b[0], b[1], b[2], b[3]};
      if (!r.bbox.valid()) shape_fail(id, "bbox needs w > 0 and h > 0");
      const auto c = number_array<2>(j, "center", id);
      r.center = {c[0], c[1]};
      return r;
    }
    case 4: {
      expect_keys(j, id, {"location"});
      const auto l = number_array<3>(j, "location", id);
      return TargetReply{Vec3(l[0], l[1], l[2])};
    }
    case 5:
      expect_keys(j, id, {"class_id"});
      return ArrivalConfirm{class_field(j, id)};
    default: {
      expect_keys(j, id, {"translation", "rotation"});
      const auto t = number_array<3>(j, "translation", id);
      const auto r = number_array<3>(j, "rotation", id);
      return PoseReply{Vec3(t[0], t[1], t[2]), EulerAngles{r[0], r[1], r[2]}};
    }
  }
}

ProtocolMessage decode_or_error(std::string_view frame) {
  try {
    return decode(frame);
  } catch (const ProtocolError& e) {
    return ErrorReply{e.what()};
  }
}

RigidTransform pose_from_reply(const PoseReply& r) { return {euler_to_rot(r.rotation), r.translation}; }

PoseReply reply_from_pose(const RigidTransform& cam_T_obj) {
  return {cam_T_obj.translation(), rot_to_euler(cam_T_obj.rotation()).angles};
}

// ---------------------------------------------------------------------------
// Server

const char* to_string(ServerState s) {
  switch (s) {
    case ServerState::idle: return "idle";
    case ServerState::captured: return "captured";
    case ServerState::located: return "located";
  }
  return "?";
}

ServerSession::ServerSession(const SimWorld& world, const std::map<int, ModelFeatureSpace>& models,
                             RobotLink& robot, ServerConfig config)
    : world_(world), models_(models), robot_(robot), config_(std::move(config)) {
  if (!world_.calib.hand_cam_to_flange) throw ProtocolError("server needs hand_cam_to_flange");
  if (!world_.calib.top_cam_to_base) throw ProtocolError("server needs top_cam_to_base");
}

ProtocolMessage ServerSession::handle(const ProtocolMessage& msg) {
  const int id = msg_id(msg);
  switch (id) {
    case 1:
      if (state_ == ServerState::located) return ErrorReply{"out of sequence: msg 1 while a target is located, expected 5"};
      return on_capture();
    case 3:
      if (state_ == ServerState::idle) return ErrorReply{"out of sequence: msg 3 before any capture, expected 1"};
      if (state_ == ServerState::located) return ErrorReply{"out of sequence: msg 3 while a target is located, expected 5"};
      return on_target(std::get<TargetRequest>(msg));
    case 5:
      if (state_ != ServerState::located)
        return ErrorReply{std::string("out of sequence: msg 5 in state ") + to_string(state_)};
      return on_arrival(std::get<ArrivalConfirm>(msg));
    default:
      return ErrorReply{"server does not accept msg " + std::to_string(id)};
  }
}

std::string ServerSession::handle_frame(std::string_view frame) {
  ProtocolMessage msg;
  try {
    msg = decode(frame);
  } catch (const ProtocolError& e) {
    return encode(ErrorReply{std::string("bad frame: ") + e.what()});
  }
  return encode(handle(msg));
}

ProtocolMessage ServerSession::on_capture() {
  Capture top;
  try {
    std::mt19937_64 rng(derive_seed(world_.seed, "top", captures_));
    top = sim_capture(world_, CameraId::top, robot_.flange_pose(), rng);
  } catch (const std::exception& e) {
    return ErrorReply{std::string("capture failed: ") + e.what()};
  }
  char ref[32];
  std::snprintf(ref, sizeof ref, "cap-%04llu", static_cast<unsigned long long>(captures_));
  if (config_.capture_dir) {
    try {
      save_capture(top, ref);
    } catch (const std::exception& e) {
      return ErrorReply{std::string("capture not saved: ") + e.what()};
    }
  }
  ++captures_;
  capture_ref_ = ref;
  top_ = std::move(top);
  state_ = ServerState::captured;
  return CaptureReply{capture_ref_};
}

ProtocolMessage ServerSession::on_target(const TargetRequest& req) {
  if (!models_.count(req.class_id)) return ErrorReply{"no model for class " + std::to_string(req.class_id)};
  Vec3 location;
  try {
    const double zmin = zmin_in_region(top_->depth, req.bbox);
    location = map_pixel_to_3d(req.center, zmin, world_.top.intr);
  } catch (const ScenePrepError& e) {
    return ErrorReply{std::string("no-depth: ") + e.what()};
  }
  target_class_ = req.class_id;
  target_location_ = location;
  state_ = ServerState::located;
  return TargetReply{location};
}

ProtocolMessage ServerSession::on_arrival(const ArrivalConfirm& req) {
  if (req.class_id != target_class_)
    return ErrorReply{"arrival for class " + std::to_string(req.class_id) + " but the located target is class " +
                      std::to_string(target_class_)};
  // Whatever happens below, the located target is consumed.
  state_ = ServerState::captured;
  const uint64_t n = estimates_++;
  last_estimate_.reset();
  const ModelFeatureSpace& space = models_.at(target_class_);

  Capture hand;
  PointCloud cloud;
  try {
    std::mt19937_64 rng(derive_seed(world_.seed, "hand", n));
    hand = sim_capture(world_, CameraId::hand, robot_.flange_pose(), rng);
    cloud = depth_to_cloud(hand.depth, world_.hand.intr);
  } catch (const std::exception& e) {
    return ErrorReply{std::string("no-depth: ") + e.what()};
  }
  if (config_.capture_dir) {
    char tag[32];
    std::snprintf(tag, sizeof tag, "hand-%04llu", static_cast<unsigned long long>(n));
    try {
      save_capture(hand, tag);
    } catch (const std::exception& e) {
      return ErrorReply{std::string("capture not saved: ") + e.what()};
    }
  }

  EstimateOptions eo = config_.estimate;
  const Vec3 in_hand = hand.camera_pose.inverse().apply(top_->camera_pose.apply(target_location_));
  try {
    eo.crop_seed = crop_center(in_hand, space.model_diameter);
  } catch (const ScenePrepError&) {
    eo.crop_seed.reset();
  }
  eo.crop_dims = Vec3::Constant(space.model_diameter);
  eo.margin = world_.calib.margin;
  try {
    last_estimate_ = estimate_pose(cloud, space, eo);
  } catch (const NoHypothesisError& e) {
    return ErrorReply{std::string("no-hypothesis: ") + e.what()};
  } catch (const std::exception& e) {
    return ErrorReply{std::string("estimation failed: ") + e.what()};
  }
  return reply_from_pose(last_estimate_->pose);
}

void ServerSession::save_capture(const Capture& cap, const std::string& tag) const {
  const auto& dir = *config_.capture_dir;
  std::filesystem::create_directories(dir);
  save_depth_pgm16(dir / (tag + ".pgm"), cap.depth);
  std::ofstream out(dir / (tag + ".json"));
  if (!out) throw ProtocolError("cannot write " + (dir / (tag + ".json")).string());
  out << json{{"ref", tag}, {"camera_pose", transform_to_json(cap.camera_pose)}}.dump(2) << "\n";
}

std::string ServerSession::state_digest() const {
  std::ostringstream s;
  s << "state=" << to_string(state_) << " captures=" << captures_ << " ref=" << capture_ref_
    << " estimates=" << estimates_ << " flange=" << robot_.flange_pose().to_text();
  if (state_ == ServerState::located) {
    s << " class=" << target_class_ << " location=" << num(target_location_.x()) << "," << num(target_location_.y())
      << "," << num(target_location_.z());
  }
  return s.str();
}

std::string LoopbackChannel::request(const std::string& frame, std::chrono::milliseconds) {
  return server_.handle_frame(frame);
}

// ---------------------------------------------------------------------------
// Client

std::string transcript_string(const std::vector<int>& ids) {
  std::string s;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(ids[i]);
  }
  return s;
}

CycleResult client_run_cycle(DetectionProvider& detector, ClientChannel& channel, RobotLink& robot,
                             const ClientConfig& config) {
  if (!config.calib.hand_cam_to_flange || !config.calib.top_cam_to_base)
    throw ProtocolError("client needs hand_cam_to_flange and top_cam_to_base");
  const RigidTransform& hcf = *config.calib.hand_cam_to_flange;

  CycleResult out;
  auto exchange = [&](const ProtocolMessage& m) {
    out.transcript.push_back(msg_id(m));
    ProtocolMessage reply = decode(channel.request(encode(m), config.timeout));
    out.transcript.push_back(msg_id(reply));
    return reply;
  };
  auto abort = [&](const std::string& why) {
    out.aborted = true;
    out.abort_reason = why;
  };
  auto unexpected = [](const ProtocolMessage& r, int want) {
    if (const auto* e = std::get_if<ErrorReply>(&r)) return "server error: " + e->error;
    return "expected msg " + std::to_string(want) + ", got msg " + std::to_string(msg_id(r));
  };

  try {
    const ProtocolMessage r2 = exchange(CaptureRequest{});
    if (!std::holds_alternative<CaptureReply>(r2)) {
      abort(unexpected(r2, 2));
      return out;
    }
    out.capture_ref = std::get<CaptureReply>(r2).capture_ref;

    std::vector<Detection> dets;
    try {
      dets = detector.detect(out.capture_ref);
    } catch (const std::exception& e) {
      abort(std::string("detection failed: ") + e.what());
      return out;
    }
    const PoseQueryQueue queue = build_query_queue(std::move(dets), config.known_classes, &out.skipped);

    for (const Detection& d : queue.items) {
      TargetResult t;
      t.detection = d;
      const ProtocolMessage r4 = exchange(TargetRequest{d.class_id, d.bbox, d.bbox.center()});
      if (const auto* e = std::get_if<ErrorReply>(&r4)) {
        t.error = e->error;
        out.targets.push_back(std::move(t));
        continue;
      }
      if (!std::holds_alternative<TargetReply>(r4)) {
        abort(unexpected(r4, 4));
        return out;
      }
      t.location = std::get<TargetReply>(r4).location;

      const RigidTransform cam = compute_approach_pose({t.location, d.class_id}, config.calib.standoff, config.calib);
      robot.move_flange(cam * hcf.inverse());

      const ProtocolMessage r6 = exchange(ArrivalConfirm{d.class_id});
      if (const auto* e = std::get_if<ErrorReply>(&r6)) {
        t.error = e->error;
        out.targets.push_back(std::move(t));
        continue;
      }
      if (!std::holds_alternative<PoseReply>(r6)) {
        abort(unexpected(r6, 6));
        return out;
      }
      t.base_pose = robot.flange_pose() * hcf * pose_from_reply(std::get<PoseReply>(r6));
      t.ok = true;
      out.targets.push_back(std::move(t));
    }
  } catch (const TimeoutError& e) {
    abort(std::string("timeout: ") + e.what());
  } catch (const ProtocolError& e) {
    abort(std::string("link error: ") + e.what());
  }
  return out;
}

}  // namespace ppfpose
