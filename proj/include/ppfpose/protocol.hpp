#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ppfpose/detect.hpp"
#include "ppfpose/geometry.hpp"
#include "ppfpose/pipeline.hpp"
#include "ppfpose/scene_prep.hpp"
#include "ppfpose/sim.hpp"

namespace ppfpose {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TimeoutError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// ---------------------------------------------------------------------------
// Messages. The variant index is the wire msg_id.

struct ErrorReply {  // 0
  std::string error;
  bool operator==(const ErrorReply&) const = default;
};
struct CaptureRequest {  // 1
  bool operator==(const CaptureRequest&) const = default;
};
struct CaptureReply {  // 2
  std::string capture_ref;
  bool operator==(const CaptureReply&) const = default;
};
struct TargetRequest {  // 3
  int class_id = 1;
  BBox2D bbox;
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  bool operator==(const TargetRequest& o) const {
    return class_id == o.class_id && bbox == o.bbox && center == o.center;
  }
};
struct TargetReply {  // 4
  Vec3 location = Vec3::Zero();  // metres, top-camera frame
  bool operator==(const TargetReply& o) const { return location == o.location; }
};
struct ArrivalConfirm {  // 5
  int class_id = 1;
  bool operator==(const ArrivalConfirm&) const = default;
};
struct PoseReply {  // 6
  Vec3 translation = Vec3::Zero();  // object in the hand-camera frame
  EulerAngles rotation;
  bool operator==(const PoseReply& o) const {
    return translation == o.translation && rotation.rx == o.rotation.rx && rotation.ry == o.rotation.ry &&
           rotation.rz == o.rotation.rz;
  }
};

using ProtocolMessage =
    std::variant<ErrorReply, CaptureRequest, CaptureReply, TargetRequest, TargetReply, ArrivalConfirm, PoseReply>;

inline int msg_id(const ProtocolMessage& m) { return static_cast<int>(m.index()); }

/// One JSON object terminated by '\n'.
std::string encode(const ProtocolMessage& m);
/// Strict decode: unknown ids, malformed JSON and payload-shape mismatches throw.
ProtocolMessage decode(std::string_view frame);
/// decode(), turning failures into an error frame.
ProtocolMessage decode_or_error(std::string_view frame);

RigidTransform pose_from_reply(const PoseReply& r);
PoseReply reply_from_pose(const RigidTransform& cam_T_obj);

// ---------------------------------------------------------------------------
// Server

enum class ServerState { idle, captured, located };
const char* to_string(ServerState s);

struct ServerConfig {
  EstimateOptions estimate;
  // When set, every capture's depth and camera pose are written here.
  std::optional<std::filesystem::path> capture_dir;
};

/// Single-client session: 1 -> 2 captures the top view, 3 -> 4 locates a
/// target, 5 -> 6 estimates its pose from the hand view. A new 1 may follow
/// any completed 2 or 6. Anything else gets an error frame and leaves the
/// session untouched.
class ServerSession {
 public:
  ServerSession(const SimWorld& world, const std::map<int, ModelFeatureSpace>& models, RobotLink& robot,
                ServerConfig config = {});

  ProtocolMessage handle(const ProtocolMessage& msg);
  std::string handle_frame(std::string_view frame);

  ServerState state() const { return state_; }
  /// Everything the next reply depends on, as text.
  std::string state_digest() const;
  const std::optional<PoseEstimate>& last_estimate() const { return last_estimate_; }

 private:
  ProtocolMessage on_capture();
  ProtocolMessage on_target(const TargetRequest& req);
  ProtocolMessage on_arrival(const ArrivalConfirm& req);
  void save_capture(const Capture& cap, const std::string& tag) const;

  const SimWorld& world_;
  const std::map<int, ModelFeatureSpace>& models_;
  RobotLink& robot_;
  ServerConfig config_;

  ServerState state_ = ServerState::idle;
  uint64_t captures_ = 0;
  std::string capture_ref_;
  std::optional<Capture> top_;
  int target_class_ = 0;
  Vec3 target_location_ = Vec3::Zero();
  uint64_t estimates_ = 0;
  std::optional<PoseEstimate> last_estimate_;
};

// ---------------------------------------------------------------------------
// Client

/// Request/reply channel as seen by the client.
class ClientChannel {
 public:
  virtual ~ClientChannel() = default;
  /// Sends one frame and waits for one reply frame. Throws TimeoutError when
  /// no reply arrives in time and ProtocolError when the link is gone.
  virtual std::string request(const std::string& frame, std::chrono::milliseconds timeout) = 0;
};

/// Calls a ServerSession directly.
class LoopbackChannel : public ClientChannel {
 public:
  explicit LoopbackChannel(ServerSession& server) : server_(server) {}
  std::string request(const std::string& frame, std::chrono::milliseconds timeout) override;

 private:
  ServerSession& server_;
};

struct ClientConfig {
  Calibration calib;
  std::set<int> known_classes;
  std::chrono::milliseconds timeout{10000};
};

struct TargetResult {
  Detection detection;
  bool ok = false;
  std::string error;
  Vec3 location = Vec3::Zero();  // top-camera frame
  RigidTransform base_pose;      // object -> robot base
};

struct CycleResult {
  std::vector<int> transcript;  // msg ids in wire order, 0 for error frames
  std::vector<TargetResult> targets;
  std::vector<Detection> skipped;  // classes without a model
  std::string capture_ref;
  bool aborted = false;
  std::string abort_reason;
};

std::string transcript_string(const std::vector<int>& ids);

/// One pass of the coordination loop: capture, detect, then for every queued
/// detection locate it, move the arm to the approach pose, and collect the
/// pose in the robot-base frame. Timeouts and lost links abort the cycle with
/// the results gathered so far; server error frames skip the current target.
CycleResult client_run_cycle(DetectionProvider& detector, ClientChannel& channel, RobotLink& robot,
                             const ClientConfig& config);

}  // namespace ppfpose
