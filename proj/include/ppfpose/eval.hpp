#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ppfpose/geometry.hpp"
#include "ppfpose/pipeline.hpp"
#include "ppfpose/ppf.hpp"
#include "ppfpose/sim.hpp"

namespace ppfpose {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Metrics

/// Mean distance between the model points placed by `gt` and by `est`.
double add_metric(std::span<const Vec3> model_points, const RigidTransform& gt, const RigidTransform& est);

/// add < 0.1 * diameter.
bool add_correct(double add, double diameter);

/// Translation error below n_cm centimetres and rotation error below n_deg degrees.
bool pose_correct_ncm_ndeg(const RigidTransform& gt, const RigidTransform& est, double n_cm, double n_deg);

// ---------------------------------------------------------------------------
// Scenarios

struct GroundTruthRecord {
  int class_id = 0;
  RigidTransform pose_gt;  // object -> base
  int rotation_step = 0;
  int repeat = 0;
  double noise_sigma = 0.0;
  bool occluded = false;
};

struct Scenario {
  std::string id;
  SimWorld world;
  size_t target = 0;  // index into world.objects
  GroundTruthRecord gt;
  uint64_t noise_seed = 0;
};

struct SuiteSpec {
  std::string kind = "turntable";  // "turntable" or "clutter"
  int rotations = 12;              // R
  std::vector<int> classes;        // O = classes.size(); empty means all nine
  int repeats = 25;                // P
  double noise_sigma = 0.0;
  int occluders = 0;
  double jitter = 0.02;  // metres, in-plane translation for repeats >= 1
  // Clutter suites: number of scenes and objects per scene.
  int scenes = 20;
  int objects_per_scene = 6;
  uint64_t seed = 1;
  // Work-area centre on the table, base frame.
  double table_x = 0.5;
  double table_y = 0.0;
};

nlohmann::json suite_to_json(const SuiteSpec& s);
SuiteSpec suite_from_json(const nlohmann::json& j);
SuiteSpec load_suite(const std::filesystem::path& path);

/// R * O * P upright scenarios on the table centre. Rotation step r turns the
/// object by 2*pi*r/R about the table normal; repeats >= 1 add a random
/// in-plane translation; every repeat draws its own noise seed.
std::vector<Scenario> generate_turntable_suite(const SuiteSpec& spec);

/// `scenes` worlds of `objects_per_scene` distinct classes at random
/// non-overlapping table positions; every placed object is one scenario.
std::vector<Scenario> generate_clutter_suite(const SuiteSpec& spec);

std::vector<Scenario> generate_suite(const SuiteSpec& spec);

// ---------------------------------------------------------------------------
// Benchmark

enum class ScenarioStatus { ok, not_detected, no_depth, no_hypothesis, failed_precondition };
const char* to_string(ScenarioStatus s);

struct AxisErrors {
  double x = 0, y = 0, z = 0;     // est - gt translation, metres, base frame
  double rx = 0, ry = 0, rz = 0;  // Euler angles of gt^-1 * est rotation, radians
};

struct ScenarioResult {
  std::string id;
  int class_id = 0;
  ScenarioStatus status = ScenarioStatus::ok;
  std::string reason;
  RigidTransform pose_est;
  double t_err = 0.0;
  double r_err = 0.0;  // radians
  double add = 0.0;
  bool correct_5cm5deg = false;
  bool correct_3cm3deg = false;
  bool correct_1cm3deg = false;
  bool correct_add = false;
  AxisErrors axis;
  uint32_t votes = 0;
  bool refined = false;
  bool cropped = false;
  size_t scene_points = 0;
  double match_ms = 0.0;
  double total_ms = 0.0;
  // Same hand view matched without the crop, when requested.
  bool has_uncropped = false;
  bool uncropped_correct_5cm5deg = false;
  size_t uncropped_scene_points = 0;
  double uncropped_match_ms = 0.0;
};

struct TimingStats {
  size_t n = 0;
  double mean = 0.0, min = 0.0, max = 0.0;
};
TimingStats timing_stats(const std::vector<double>& ms);

struct ClassStats {
  int class_id = 0;
  std::string name;
  size_t scenarios = 0;
  size_t successes = 0;  // pipeline returned a pose
  size_t failures = 0;   // detection, depth or matching failed
  size_t failed_precondition = 0;
  size_t evaluated = 0;  // scenarios - failed_precondition, the metric denominator
  size_t n_5cm5deg = 0, n_3cm3deg = 0, n_1cm3deg = 0, n_add = 0;
  double rate_5cm5deg = 0, rate_3cm3deg = 0, rate_1cm3deg = 0, rate_add = 0;
  size_t add_model_points = 0;
};

struct EvalReport {
  std::vector<ScenarioResult> results;  // sorted by scenario id
  std::vector<ClassStats> classes;      // by class id
  double avg_5cm5deg = 0, avg_3cm3deg = 0, avg_1cm3deg = 0, avg_add = 0;
  TimingStats match_cropped, match_uncropped, total;
  size_t monotonicity_violations = 0;  // 3cm3deg-correct but 5cm5deg-incorrect

  /// Timings are wall-clock and so excluded unless asked for.
  nlohmann::json to_json(bool include_timing) const;
  std::string text_table(bool include_timing) const;
};

struct BenchmarkOptions {
  EstimateOptions estimate;
  bool compare_uncropped = false;
  int threads = 1;  // scenarios run in parallel when > 1
};

using ModelRegistry = std::map<int, ModelFeatureSpace>;

/// Runs detection, target localisation, approach, hand capture and pose
/// estimation for one scenario. Does not throw on pipeline failures.
ScenarioResult run_scenario(const Scenario& sc, const ModelRegistry& models, const BenchmarkOptions& opts);

EvalReport run_benchmark(const std::vector<Scenario>& suite, const ModelRegistry& models,
                         const BenchmarkOptions& opts);

/// Trains a model space for every catalogue class named in the suite.
ModelRegistry train_catalog_models(const std::vector<int>& class_ids, const TrainOptions& opts = {});

// ---------------------------------------------------------------------------
// Error histograms

struct Histogram {
  std::string axis;
  double width = 0.0;
  int half_bins = 0;  // bins cover [-(half_bins + 0.5), half_bins + 0.5] * width
  std::vector<size_t> counts;

  double center(size_t bin) const;
  size_t bin_of(double v) const;  // out-of-range values land in the end bins
};

/// Six histograms (x, y, z in metres; rx, ry, rz in radians) over the
/// scenarios that are correct under `metric` ("5cm5deg", "3cm3deg", "add").
std::vector<Histogram> error_distributions(const std::vector<ScenarioResult>& results, const std::string& metric,
                                           double t_width = 0.002, double r_width = 0.25 * M_PI / 180.0,
                                           int half_bins = 25);
std::string histograms_csv(const std::vector<Histogram>& hists);

}  // namespace ppfpose
