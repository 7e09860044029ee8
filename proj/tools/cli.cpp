#include "cli.hpp"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ppfpose/detect.hpp"
#include "ppfpose/eval.hpp"
#include "ppfpose/protocol.hpp"
#include "ppfpose/scene_prep.hpp"
#include "ppfpose/sim.hpp"

namespace ppfpose::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

// Failure that maps to a specific exit code.
struct Exit {
  int code;
  std::string message;
};

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* key : keys) ok = ok || k == key;
    if (!ok) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
T get_as(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json pose_json(const RigidTransform& t) {
  const auto e = rot_to_euler(t.rotation()).angles;
  return {{"translation", vec3_json(t.translation())}, {"rotation_euler", {e.rx, e.ry, e.rz}}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Exit{kIo, "cannot write " + path.string()};
  f << text;
  if (!f) throw Exit{kIo, "write failed: " + path.string()};
}

std::optional<BBox2D> parse_bbox(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::array<double, 4> v{};
  std::string tok;
  std::istringstream in(s);
  size_t n = 0;
  while (std::getline(in, tok, ',')) {
    if (n == 4) throw Exit{kConfig, "--bbox takes x,y,w,h"};
    try {
      size_t used = 0;
      v[n++] = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw Exit{kConfig, "--bbox: bad number '" + tok + "'"};
    }
  }
  if (n != 4) throw Exit{kConfig, "--bbox takes x,y,w,h"};
  BBox2D b{v[0], v[1], v[2], v[3]};
  if (!b.valid()) throw Exit{kConfig, "--bbox needs w > 0 and h > 0"};
  return b;
}

// Mesh from a PLY path or "procedural:<name>".
Mesh load_mesh_arg(const std::string& arg, bool strict_units, std::ostream& err) {
  if (arg.rfind("procedural:", 0) == 0) {
    const ObjectClass* oc = find_catalog_object(arg.substr(11));
    if (!oc) throw Exit{kConfig, "unknown procedural object '" + arg.substr(11) + "'"};
    return oc->mesh;
  }
  if (!fs::exists(arg)) throw Exit{kConfig, "mesh file not found: " + arg};
  PlyData ply = load_ply(arg);
  if (ply.mesh.scaled_from_mm) {
    if (strict_units) throw Exit{kConfig, arg + ": coordinates look like millimetres (rejected by --strict-units)"};
    err << "warning: " << arg << ": coordinates look like millimetres, scaled by 1e-3\n";
  }
  return ply.mesh;
}

SimWorld load_world_arg(const RunConfig& cfg) {
  if (!cfg.world_file) throw Exit{kConfig, "--world is required"};
  SimWorld w = load_world(*cfg.world_file);
  if (cfg.calib_file) {
    std::ifstream f(*cfg.calib_file);
    if (!f) throw Exit{kConfig, "cannot open calibration file " + cfg.calib_file->string()};
    try {
      w.calib = calibration_from_json(json::parse(f));
    } catch (const json::exception& e) {
      throw Exit{kConfig, cfg.calib_file->string() + ": " + e.what()};
    }
    w.calib.top_intrinsics = w.top.intr;
    w.calib.hand_intrinsics = w.hand.intr;
  }
  if (cfg.seed) w.seed = *cfg.seed;
  if (cfg.noise_sigma) w.noise_sigma = *cfg.noise_sigma;
  return w;
}

std::set<int> world_classes(const SimWorld& w) {
  std::set<int> s;
  for (const auto& p : w.objects) s.insert(p.class_id);
  return s;
}

ModelFeatureSpace load_model_arg(const fs::path& path) {
  if (!fs::exists(path)) throw Exit{kConfig, "model file not found: " + path.string()};
  try {
    return load_model_space(path);
  } catch (const ModelFileError& e) {
    throw Exit{kBadModel, e.what()};
  }
}

// Models for every class in the world: from the models directory when given,
// else trained from the world's meshes.
ModelRegistry world_models(const SimWorld& w, const RunConfig& cfg, std::ostream& out) {
  ModelRegistry reg;
  TrainOptions topts;
  topts.params = cfg.match;
  for (const auto& p : w.objects) {
    if (reg.count(p.class_id)) continue;
    if (cfg.models_dir) {
      reg.emplace(p.class_id, load_model_arg(*cfg.models_dir / model_file_name(p.class_id)));
    } else {
      out << "training class " << p.class_id << " from " << p.mesh_ref << "\n" << std::flush;
      reg.emplace(p.class_id, train_model(w.mesh_for(p), topts));
    }
  }
  return reg;
}

// ---------------------------------------------------------------------------
// Subcommands

struct TrainArgs {
  std::string mesh;
  std::string out;
  bool strict_units = false;
};

int cmd_train(const TrainArgs& a, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const Mesh mesh = load_mesh_arg(a.mesh, a.strict_units, err);
  TrainOptions topts;
  topts.params = cfg.match;
  topts.leaf_rel = cfg.estimate.leaf_rel;
  TrainStats st;
  const ModelFeatureSpace space = train_model(mesh, topts, &st);
  const fs::path dst(a.out);
  if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
  try {
    save_model_space(dst, space);
  } catch (const std::exception& e) {
    throw Exit{kIo, e.what()};
  }
  const size_t n = st.model_points;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "model points: %zu (dense %zu)\nordered pairs: %zu, degenerate: %zu, entries: %zu\n"
                "distinct keys: %zu, load factor: %.3f\ndiameter: %.6f m\nbuild time: %.1f ms\nwrote %s\n",
                n, st.dense_points, n * (n - 1), space.degenerate_pairs, st.entries, st.keys, st.load_factor,
                space.model_diameter, st.build_ms, dst.string().c_str());
  out << buf;
  return kOk;
}

struct EstimateArgs {
  std::string model;
  std::string depth;
  std::string intrinsics;
  std::string bbox;
  bool no_refine = false;
  std::string out;
};

int cmd_estimate(const EstimateArgs& a, const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const ModelFeatureSpace space = load_model_arg(a.model);
  CameraIntrinsics intr;
  {
    std::ifstream f(a.intrinsics);
    if (!f) throw Exit{kConfig, "cannot open intrinsics file " + a.intrinsics};
    try {
      intr = intrinsics_from_json(json::parse(f));
    } catch (const std::exception& e) {
      throw Exit{kConfig, a.intrinsics + ": " + e.what()};
    }
  }
  if (!fs::exists(a.depth)) throw Exit{kConfig, "depth file not found: " + a.depth};
  const DepthImage depth = load_depth(a.depth);
  if (depth.width != intr.width || depth.height != intr.height)
    throw Exit{kConfig, "depth image size does not match the intrinsics"};

  EstimateOptions eo = cfg.estimate;
  eo.match.threads = static_cast<unsigned>(cfg.threads);
  if (a.no_refine) eo.refine = false;
  const auto bbox = parse_bbox(a.bbox);
  if (bbox) {
    try {
      const Vec3 loc = map_pixel_to_3d(bbox->center(), zmin_in_region(depth, *bbox), intr);
      eo.crop_seed = crop_center(loc, space.model_diameter);
      eo.crop_dims = Vec3::Constant(space.model_diameter);
    } catch (const ScenePrepError& e) {
      out << json{{"error", "no-depth"}, {"reason", e.what()}}.dump() << "\n";
      return kConfig;
    }
  }

  PoseEstimate est;
  try {
    est = estimate_pose(depth_to_cloud(depth, intr), space, eo);
  } catch (const NoHypothesisError& e) {
    out << json{{"error", "no-hypothesis"}, {"reason", e.what()}}.dump() << "\n";
    return kConfig;
  } catch (const PointCloudError& e) {
    out << json{{"error", "no-hypothesis"}, {"reason", e.what()}}.dump() << "\n";
    return kConfig;
  }
  json j = pose_json(est.pose);
  j["votes"] = est.votes;
  j["refined"] = est.refined;
  j["cropped"] = est.cropped;
  if (!est.crop_fallback.empty()) j["crop_fallback"] = est.crop_fallback;
  j["scene_points"] = est.scene_points;
  j["match_ms"] = est.match_ms;
  const std::string text = j.dump(2) + "\n";
  if (!a.out.empty()) write_text(a.out, text);
  out << text;
  return kOk;
}

struct ServeArgs {
  std::string robot_state;
  std::string capture_dir;
  std::string port_file;
  size_t sessions = 0;
};

int cmd_serve(const ServeArgs& a, const RunConfig& cfg, std::ostream& out, std::ostream&) {
  SimWorld world = load_world_arg(cfg);
  const ModelRegistry models = world_models(world, cfg, out);
  FileRobot robot(a.robot_state, world.initial_flange);
  robot.move_flange(world.initial_flange);
  ServerConfig scfg;
  scfg.estimate = cfg.estimate;
  scfg.estimate.match.threads = static_cast<unsigned>(cfg.threads);
  if (!a.capture_dir.empty()) scfg.capture_dir = a.capture_dir;
  ServerSession session(world, models, robot, scfg);
  TcpServer server(cfg.port, cfg.host);
  if (!a.port_file.empty()) write_text(a.port_file, std::to_string(server.port()) + "\n");
  out << "listening on " << cfg.host << ":" << server.port() << "\n" << std::flush;
  g_stop = false;
  auto prev_int = std::signal(SIGINT, on_signal);
  auto prev_term = std::signal(SIGTERM, on_signal);
  const size_t frames = server.serve(session, a.sessions, &g_stop);
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  out << "handled " << frames << " frames\n";
  return kOk;
}

struct ClientArgs {
  std::string detector = "synthetic";
  std::string robot_state;
  std::string transcript;
  std::string out;
  std::vector<int> classes;
};

int cmd_client(const ClientArgs& a, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  SimWorld world = load_world_arg(cfg);
  std::unique_ptr<DetectionProvider> detector;
  if (a.detector == "synthetic") {
    detector = std::make_unique<SyntheticDetector>(world);
  } else if (a.detector.rfind("file:", 0) == 0) {
    const fs::path p = a.detector.substr(5);
    if (!fs::exists(p)) throw Exit{kConfig, "detections file not found: " + p.string()};
    detector = std::make_unique<FileDetector>(p);
  } else {
    throw Exit{kConfig, "--detector must be 'synthetic' or 'file:<path>'"};
  }
  if (!fs::exists(a.robot_state)) throw Exit{kConfig, "robot state not found: " + a.robot_state + " (start serve first)"};
  FileRobot robot(a.robot_state, world.initial_flange);

  ClientConfig ccfg;
  ccfg.calib = world.calib;
  ccfg.timeout = std::chrono::milliseconds(cfg.timeout_ms);
  if (a.classes.empty()) {
    ccfg.known_classes = world_classes(world);
  } else {
    ccfg.known_classes.insert(a.classes.begin(), a.classes.end());
  }

  std::unique_ptr<TcpClientChannel> channel;
  try {
    channel = std::make_unique<TcpClientChannel>(cfg.host, cfg.port);
  } catch (const ProtocolError& e) {
    throw Exit{kIo, e.what()};
  }

  json cycles = json::array();
  std::string transcript;
  size_t ok = 0, failed = 0;
  bool aborted = false;
  for (int c = 0; c < cfg.cycles && !aborted; ++c) {
    const CycleResult r = client_run_cycle(*detector, *channel, robot, ccfg);
    transcript += transcript_string(r.transcript) + "\n";
    json targets = json::array();
    for (const auto& t : r.targets) {
      json tj = {{"class_id", t.detection.class_id},
                 {"bbox", {t.detection.bbox.x, t.detection.bbox.y, t.detection.bbox.w, t.detection.bbox.h}},
                 {"ok", t.ok}};
      if (t.ok) {
        tj["location"] = vec3_json(t.location);
        tj["base_pose"] = pose_json(t.base_pose);
        ++ok;
        out << "cycle " << c << " class " << t.detection.class_id << ": " << tj["base_pose"].dump() << "\n";
      } else {
        tj["error"] = t.error;
        ++failed;
        out << "cycle " << c << " class " << t.detection.class_id << ": error: " << t.error << "\n";
      }
      targets.push_back(tj);
    }
    json skipped = json::array();
    for (const auto& d : r.skipped) skipped.push_back(detection_to_json(d));
    json cj = {{"capture_ref", r.capture_ref},
               {"transcript", transcript_string(r.transcript)},
               {"targets", targets},
               {"skipped", skipped}};
    if (r.aborted) {
      cj["aborted"] = r.abort_reason;
      err << "cycle " << c << " aborted: " << r.abort_reason << "\n";
      aborted = true;
    }
    cycles.push_back(cj);
  }
  if (!a.transcript.empty()) write_text(a.transcript, transcript);
  if (!a.out.empty()) write_text(a.out, cycles.dump(2) + "\n");
  if (aborted && ok == 0) return kIo;
  return (aborted || failed > 0) ? kPartial : kOk;
}

struct EvaluateArgs {
  std::string suite;
  std::string out;
  bool compare_crop = false;
};

SuiteSpec load_suite_arg(const std::string& path, const RunConfig& cfg) {
  if (!fs::exists(path)) throw Exit{kConfig, "suite file not found: " + path};
  SuiteSpec s;
  try {
    s = load_suite(path);
  } catch (const EvalError& e) {
    throw Exit{kConfig, e.what()};
  }
  if (cfg.seed) s.seed = *cfg.seed;
  if (cfg.noise_sigma) s.noise_sigma = *cfg.noise_sigma;
  return s;
}

std::vector<int> suite_classes(const SuiteSpec& s) {
  if (!s.classes.empty()) return s.classes;
  std::vector<int> all;
  for (const auto& oc : object_catalog()) all.push_back(oc.class_id);
  return all;
}

EvalReport run_suite(const SuiteSpec& spec, const RunConfig& cfg, bool compare, std::ostream& out) {
  const auto suite = generate_suite(spec);
  TrainOptions topts;
  topts.params = cfg.match;
  const ModelRegistry models = train_catalog_models(suite_classes(spec), topts);
  BenchmarkOptions bo;
  bo.estimate = cfg.estimate;
  bo.compare_uncropped = compare;
  bo.threads = cfg.threads;
  out << "running " << suite.size() << " scenarios\n" << std::flush;
  return run_benchmark(suite, models, bo);
}

json timing_json(const TimingStats& t) { return {{"n", t.n}, {"mean_ms", t.mean}, {"min_ms", t.min}, {"max_ms", t.max}}; }

int cmd_evaluate(const EvaluateArgs& a, const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const SuiteSpec spec = load_suite_arg(a.suite, cfg);
  const EvalReport rep = run_suite(spec, cfg, a.compare_crop, out);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_text(dir / "report.json", rep.to_json(false).dump(2) + "\n");
  write_text(dir / "report.txt", rep.text_table(false));
  write_text(dir / "histograms.csv", histograms_csv(error_distributions(rep.results, "5cm5deg")));
  write_text(dir / "timing.json", json{{"match_cropped", timing_json(rep.match_cropped)},
                                       {"match_uncropped", timing_json(rep.match_uncropped)},
                                       {"total", timing_json(rep.total)}}
                                      .dump(2) +
                                      "\n");
  out << rep.text_table(true);
  size_t failures = 0, precondition = 0;
  for (const auto& c : rep.classes) {
    failures += c.failures;
    precondition += c.failed_precondition;
  }
  return (failures + precondition) == 0 ? kOk : kPartial;
}

struct BenchArgs {
  std::string suite;
  std::string out;
  bool compare_crop = false;
};

int cmd_bench(const BenchArgs& a, const RunConfig& cfg, std::ostream& out, std::ostream&) {
  SuiteSpec spec;
  if (a.suite.empty()) {
    spec.kind = "clutter";
    if (cfg.seed) spec.seed = *cfg.seed;
  } else {
    spec = load_suite_arg(a.suite, cfg);
  }
  const EvalReport rep = run_suite(spec, cfg, a.compare_crop, out);
  size_t n = 0, crop_ok = 0, full_ok = 0;
  for (const auto& r : rep.results) {
    if (r.status == ScenarioStatus::failed_precondition) continue;
    ++n;
    crop_ok += r.correct_5cm5deg;
    full_ok += r.uncropped_correct_5cm5deg;
  }
  json j = {{"scenarios", n},
            {"match_cropped", timing_json(rep.match_cropped)},
            {"total", timing_json(rep.total)},
            {"correct_5cm5deg_cropped", crop_ok}};
  char buf[256];
  std::snprintf(buf, sizeof buf, "scenarios: %zu\ncropped:   match %.1f ms mean (%.1f..%.1f), 5cm5deg %zu/%zu\n", n,
                rep.match_cropped.mean, rep.match_cropped.min, rep.match_cropped.max, crop_ok, n);
  out << buf;
  if (a.compare_crop) {
    const double ratio = rep.match_uncropped.mean > 0 ? rep.match_cropped.mean / rep.match_uncropped.mean : 0.0;
    std::snprintf(buf, sizeof buf, "uncropped: match %.1f ms mean (%.1f..%.1f), 5cm5deg %zu/%zu\nratio: %.3f\n",
                  rep.match_uncropped.mean, rep.match_uncropped.min, rep.match_uncropped.max, full_ok, n, ratio);
    out << buf;
    j["match_uncropped"] = timing_json(rep.match_uncropped);
    j["correct_5cm5deg_uncropped"] = full_ok;
    j["time_ratio"] = ratio;
  }
  if (!a.out.empty()) write_text(a.out, j.dump(2) + "\n");
  return kOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  try {
    match.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("match: ") + e.what());
  }
  if (estimate.normal_k < 3) throw ConfigError("estimate.normal_k must be >= 3");
  if (!(estimate.leaf_rel > 0.0)) throw ConfigError("estimate.leaf_rel must be > 0");
  if (estimate.verify_top_k < 1) throw ConfigError("estimate.verify_top_k must be >= 1");
  if (!(estimate.margin >= 1.0)) throw ConfigError("estimate.margin must be >= 1");
  if (!(estimate.min_view_cos >= 0.0 && estimate.min_view_cos < 1.0))
    throw ConfigError("estimate.min_view_cos must be in [0, 1)");
  if (cycles < 1) throw ConfigError("cycles must be >= 1");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (timeout_ms < 1) throw ConfigError("timeout_ms must be >= 1");
  if (noise_sigma && !(*noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j, "config",
                 {"models_dir", "calib", "world", "match", "estimate", "port", "host", "seed", "cycles", "noise_sigma",
                  "threads", "timeout_ms"});
  RunConfig c;
  if (j.contains("models_dir")) c.models_dir = get_as<std::string>(j, "models_dir", "config");
  if (j.contains("calib")) c.calib_file = get_as<std::string>(j, "calib", "config");
  if (j.contains("world")) c.world_file = get_as<std::string>(j, "world", "config");
  if (j.contains("match")) {
    const json& m = j["match"];
    reject_unknown(m, "config.match",
                   {"dist_step_rel", "n_angle_bins", "scene_ref_stride", "cluster_t_rel", "cluster_r_deg",
                    "peak_keep_rel"});
    const std::string w = "config.match";
    if (m.contains("dist_step_rel")) c.match.dist_step_rel = get_as<double>(m, "dist_step_rel", w);
    if (m.contains("n_angle_bins")) c.match.n_angle_bins = get_as<int>(m, "n_angle_bins", w);
    if (m.contains("scene_ref_stride")) c.match.scene_ref_stride = get_as<int>(m, "scene_ref_stride", w);
    if (m.contains("cluster_t_rel")) c.match.cluster_t_rel = get_as<double>(m, "cluster_t_rel", w);
    if (m.contains("cluster_r_deg")) c.match.cluster_r = get_as<double>(m, "cluster_r_deg", w) * M_PI / 180.0;
    if (m.contains("peak_keep_rel")) c.match.peak_keep_rel = get_as<double>(m, "peak_keep_rel", w);
  }
  if (j.contains("estimate")) {
    const json& e = j["estimate"];
    reject_unknown(e, "config.estimate", {"normal_k", "leaf_rel", "refine", "verify_top_k", "margin", "min_view_cos"});
    const std::string w = "config.estimate";
    if (e.contains("normal_k")) c.estimate.normal_k = get_as<int>(e, "normal_k", w);
    if (e.contains("leaf_rel")) c.estimate.leaf_rel = get_as<double>(e, "leaf_rel", w);
    if (e.contains("refine")) c.estimate.refine = get_as<bool>(e, "refine", w);
    if (e.contains("verify_top_k")) c.estimate.verify_top_k = get_as<int>(e, "verify_top_k", w);
    if (e.contains("margin")) c.estimate.margin = get_as<double>(e, "margin", w);
    if (e.contains("min_view_cos")) c.estimate.min_view_cos = get_as<double>(e, "min_view_cos", w);
  }
  if (j.contains("port")) {
    const int p = get_as<int>(j, "port", "config");
    if (p < 0 || p > 65535) throw ConfigError("config.port out of range");
    c.port = static_cast<uint16_t>(p);
  }
  if (j.contains("host")) c.host = get_as<std::string>(j, "host", "config");
  if (j.contains("seed")) c.seed = get_as<uint64_t>(j, "seed", "config");
  if (j.contains("cycles")) c.cycles = get_as<int>(j, "cycles", "config");
  if (j.contains("noise_sigma")) c.noise_sigma = get_as<double>(j, "noise_sigma", "config");
  if (j.contains("threads")) c.threads = get_as<int>(j, "threads", "config");
  if (j.contains("timeout_ms")) c.timeout_ms = get_as<int>(j, "timeout_ms", "config");
  c.validate();
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j = {{"match",
             {{"dist_step_rel", c.match.dist_step_rel},
              {"n_angle_bins", c.match.n_angle_bins},
              {"scene_ref_stride", c.match.scene_ref_stride},
              {"cluster_t_rel", c.match.cluster_t_rel},
              {"cluster_r_deg", c.match.cluster_r * 180.0 / M_PI},
              {"peak_keep_rel", c.match.peak_keep_rel}}},
            {"estimate",
             {{"normal_k", c.estimate.normal_k},
              {"leaf_rel", c.estimate.leaf_rel},
              {"refine", c.estimate.refine},
              {"verify_top_k", c.estimate.verify_top_k},
              {"margin", c.estimate.margin},
              {"min_view_cos", c.estimate.min_view_cos}}},
            {"port", c.port},
            {"host", c.host},
            {"cycles", c.cycles},
            {"threads", c.threads},
            {"timeout_ms", c.timeout_ms}};
  if (c.models_dir) j["models_dir"] = c.models_dir->string();
  if (c.calib_file) j["calib"] = c.calib_file->string();
  if (c.world_file) j["world"] = c.world_file->string();
  if (c.seed) j["seed"] = *c.seed;
  if (c.noise_sigma) j["noise_sigma"] = *c.noise_sigma;
  return j;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path.string());
  try {
    return run_config_from_json(json::parse(f));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string model_file_name(int class_id) { return "class_" + std::to_string(class_id) + ".ppf"; }

// ---------------------------------------------------------------------------
// Entry point

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point-pair-feature pose estimation with a simulated capture rig", "ppfpose"};
  app.require_subcommand(1);

  std::string config_path;
  std::string world, calib, models_dir, host;
  std::optional<uint64_t> seed;
  std::optional<int> port, cycles, threads, timeout_ms;
  std::optional<double> noise;
  auto common = [&](CLI::App* s) {
    s->add_option("--config", config_path, "RunConfig JSON file");
    s->add_option("--seed", seed, "Master seed");
    s->add_option("--threads", threads, "Worker threads (0 = all cores)");
  };

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Build a model feature space from a mesh");
  train->add_option("--mesh", ta.mesh, "ASCII PLY file or procedural:<name>")->required();
  train->add_option("--out", ta.out, "Model file to write")->required();
  train->add_flag("--strict-units", ta.strict_units, "Fail instead of warning on millimetre-looking input");
  common(train);

  EstimateArgs ea;
  auto* estimate = app.add_subcommand("estimate", "Estimate one object pose from a depth image");
  estimate->add_option("--model", ea.model, "Model file from train")->required();
  estimate->add_option("--depth", ea.depth, "Depth image (.pgm in mm or raw float32 with .json header)")->required();
  estimate->add_option("--intrinsics", ea.intrinsics, "Camera intrinsics JSON")->required();
  estimate->add_option("--bbox", ea.bbox, "x,y,w,h of the target in the depth image; enables cropping");
  estimate->add_flag("--no-refine", ea.no_refine, "Skip ICP");
  estimate->add_option("--out", ea.out, "Also write the pose JSON here");
  common(estimate);

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "Run the pose server over TCP on a simulated world");
  serve->add_option("--world", world, "World JSON file");
  serve->add_option("--calib", calib, "Calibration JSON overriding the world's");
  serve->add_option("--models-dir", models_dir, "Directory of class_<id>.ppf files; trains from the world if absent");
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "TCP port (0 picks a free one)");
  serve->add_option("--noise", noise, "Depth noise sigma in metres");
  serve->add_option("--robot-state", sa.robot_state, "Arm state file shared with the client")->required();
  serve->add_option("--capture-dir", sa.capture_dir, "Save every capture here");
  serve->add_option("--port-file", sa.port_file, "Write the bound port here");
  serve->add_option("--sessions", sa.sessions, "Exit after this many client connections (0 = run until signalled)");
  common(serve);

  ClientArgs ca;
  auto* client = app.add_subcommand("client", "Run coordination cycles against a server");
  client->add_option("--world", world, "World JSON file (calibration and synthetic detections)");
  client->add_option("--calib", calib, "Calibration JSON overriding the world's");
  client->add_option("--detector", ca.detector, "synthetic or file:<detections.json>");
  client->add_option("--host", host, "Server address");
  client->add_option("--port", port, "Server port");
  client->add_option("--cycles", cycles, "Number of cycles to run");
  client->add_option("--timeout-ms", timeout_ms, "Reply timeout");
  client->add_option("--classes", ca.classes, "Classes with a model on the server (default: all in the world)")
      ->delimiter(',');
  client->add_option("--robot-state", ca.robot_state, "Arm state file shared with the server")->required();
  client->add_option("--transcript", ca.transcript, "Write the msg id transcript here");
  client->add_option("--out", ca.out, "Write per-target results JSON here");
  common(client);

  EvaluateArgs va;
  auto* evaluate = app.add_subcommand("evaluate", "Run a scenario suite and write reports");
  evaluate->add_option("--suite", va.suite, "Suite JSON file")->required();
  evaluate->add_option("--out", va.out, "Output directory")->required();
  evaluate->add_option("--noise", noise, "Override the suite's depth noise sigma");
  evaluate->add_flag("--compare-crop", va.compare_crop, "Also match every hand view without cropping");
  common(evaluate);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time matching with and without cropping");
  bench->add_option("--suite", ba.suite, "Suite JSON file (default: 20 cluttered six-object scenes)");
  bench->add_option("--out", ba.out, "Write timing JSON here");
  bench->add_flag("--compare-crop", ba.compare_crop, "Also match every hand view without cropping");
  common(bench);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (!world.empty()) cfg.world_file = world;
    if (!calib.empty()) cfg.calib_file = calib;
    if (!models_dir.empty()) cfg.models_dir = models_dir;
    if (!host.empty()) cfg.host = host;
    if (seed) cfg.seed = seed;
    if (port) {
      if (*port < 0 || *port > 65535) throw ConfigError("--port out of range");
      cfg.port = static_cast<uint16_t>(*port);
    }
    if (cycles) cfg.cycles = *cycles;
    if (threads) cfg.threads = *threads;
    if (timeout_ms) cfg.timeout_ms = *timeout_ms;
    if (noise) cfg.noise_sigma = noise;
    cfg.validate();

    if (sub == train) return cmd_train(ta, cfg, out, err);
    if (sub == estimate) return cmd_estimate(ea, cfg, out, err);
    if (sub == serve) return cmd_serve(sa, cfg, out, err);
    if (sub == client) return cmd_client(ca, cfg, out, err);
    if (sub == evaluate) return cmd_evaluate(va, cfg, out, err);
    return cmd_bench(ba, cfg, out, err);
  } catch (const Exit& e) {
    err << name << ": " << e.message << "\n";
    return e.code;
  } catch (const ConfigError& e) {
    err << name << ": " << e.what() << "\n";
    return kConfig;
  } catch (const ModelFileError& e) {
    err << name << ": " << e.what() << "\n";
    return kBadModel;
  } catch (const SimError& e) {
    err << name << ": " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    err << name << ": " << e.what() << "\n";
    return kIo;
  }
}

}  // namespace ppfpose::cli
