#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppfpose/scene_prep.hpp"
#include "ppfpose/sim.hpp"

namespace ppfpose {

class DetectionSchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Detection {
  int class_id = 1;
  double score = 1.0;
  BBox2D bbox;
  std::optional<Image<uint8_t>> mask;  // carried through, not used for cropping
};

/// Detections ordered by class id, then score descending, then bbox centre
/// (y, x) ascending.
struct PoseQueryQueue {
  std::vector<Detection> items;

  bool empty() const { return items.empty(); }
  size_t size() const { return items.size(); }
  // Distinct class ids in queue order.
  std::vector<int> classes() const;
};

nlohmann::json detection_to_json(const Detection& d);
/// Validates one record; `where` prefixes diagnostics (e.g. "detections[3]").
Detection detection_from_json(const nlohmann::json& j, const std::string& where = "detection");

std::vector<Detection> parse_detections(const std::string& text);
std::vector<Detection> load_detections(const std::filesystem::path& path);
void save_detections(const std::filesystem::path& path, const std::vector<Detection>& dets);

/// Object-of-interest grouping: output does not depend on input order.
PoseQueryQueue group_and_sort(std::vector<Detection> dets);

/// Drops detections whose class has no trained model, then groups and sorts.
PoseQueryQueue build_query_queue(std::vector<Detection> dets, const std::set<int>& known_classes,
                                 std::vector<Detection>* skipped = nullptr);

std::string queue_bytes(const PoseQueryQueue& q);

/// Ground-truth projector: one detection per placed object whose 3-d
/// bounding box projects into the image, bbox = hull of the projected corners
/// clamped to the image, score 1.
std::vector<Detection> synthetic_detect(const SimWorld& world, const CameraIntrinsics& intr,
                                        const RigidTransform& camera_pose);

class DetectionProvider {
 public:
  virtual ~DetectionProvider() = default;
  virtual std::vector<Detection> detect(const std::string& capture_ref) = 0;
};

class FileDetector : public DetectionProvider {
 public:
  explicit FileDetector(std::filesystem::path path) : path_(std::move(path)) {}
  std::vector<Detection> detect(const std::string& capture_ref) override;

 private:
  std::filesystem::path path_;
};

/// Projects the world's ground truth through the top camera. Detections whose
/// bbox centre lies outside `roi` (the ROI pre-processing mask) are dropped.
class SyntheticDetector : public DetectionProvider {
 public:
  explicit SyntheticDetector(const SimWorld& world, std::optional<PixelRect> roi = std::nullopt)
      : world_(world), roi_(roi) {}
  std::vector<Detection> detect(const std::string& capture_ref) override;

 private:
  const SimWorld& world_;
  std::optional<PixelRect> roi_;
};

}  // namespace ppfpose
