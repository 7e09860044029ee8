#include "ppfpose/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "ppfpose/detect.hpp"
#include "ppfpose/scene_prep.hpp"

namespace ppfpose {

using nlohmann::json;

double add_metric(std::span<const Vec3> model_points, const RigidTransform& gt, const RigidTransform& est) {
  if (model_points.empty()) throw EvalError("ADD needs at least one model point");
  double sum = 0.0;
  for (const auto& m : model_points) sum += (gt.apply(m) - est.apply(m)).norm();
  return sum / static_cast<double>(model_points.size());
}

bool add_correct(double add, double diameter) {
  if (!(diameter > 0.0)) throw EvalError("ADD threshold needs a positive diameter");
  return add < 0.1 * diameter;
}

bool pose_correct_ncm_ndeg(const RigidTransform& gt, const RigidTransform& est, double n_cm, double n_deg) {
  if (!(n_cm > 0.0) || !(n_deg > 0.0)) throw EvalError("pose thresholds must be positive");
  const double t = (gt.translation() - est.translation()).norm();
  const double r = rotation_angle(gt.rotation(), est.rotation());
  return t < n_cm / 100.0 && r < deg2rad(n_deg);
}

// ---------------------------------------------------------------------------
// Suites

json suite_to_json(const SuiteSpec& s) {
  return json{{"kind", s.kind},
              {"rotations", s.rotations},
              {"classes", s.classes},
              {"repeats", s.repeats},
              {"noise_sigma", s.noise_sigma},
              {"occluders", s.occluders},
              {"jitter", s.jitter},
              {"scenes", s.scenes},
              {"objects_per_scene", s.objects_per_scene},
              {"seed", s.seed},
              {"table_x", s.table_x},
              {"table_y", s.table_y}};
}

SuiteSpec suite_from_json(const json& j) {
  if (!j.is_object()) throw EvalError("suite must be a JSON object");
  static const std::vector<std::string> keys{"kind",   "rotations", "classes", "repeats",
                                             "noise_sigma", "occluders", "jitter",  "scenes",
                                             "objects_per_scene", "seed", "table_x", "table_y"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw EvalError("suite: unknown key '" + k + "'");
  }
  SuiteSpec s;
  try {
    s.kind = j.value("kind", s.kind);
    s.rotations = j.value("rotations", s.rotations);
    s.classes = j.value("classes", s.classes);
    s.repeats = j.value("repeats", s.repeats);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.occluders = j.value("occluders", s.occluders);
    s.jitter = j.value("jitter", s.jitter);
    s.scenes = j.value("scenes", s.scenes);
    s.objects_per_scene = j.value("objects_per_scene", s.objects_per_scene);
    s.seed = j.value("seed", s.seed);
    s.table_x = j.value("table_x", s.table_x);
    s.table_y = j.value("table_y", s.table_y);
  } catch (const json::exception& e) {
    throw EvalError(std::string("suite: ") + e.what());
  }
  if (s.kind != "turntable" && s.kind != "clutter") throw EvalError("suite: kind must be turntable or clutter");
  if (s.rotations < 1 || s.repeats < 1) throw EvalError("suite: rotations and repeats must be >= 1");
  if (s.noise_sigma < 0.0 || s.jitter < 0.0 || s.occluders < 0) throw EvalError("suite: negative parameter");
  if (s.kind == "clutter" && (s.scenes < 1 || s.objects_per_scene < 1))
    throw EvalError("suite: clutter needs scenes and objects_per_scene >= 1");
  for (int c : s.classes) catalog_object(c);
  return s;
}

SuiteSpec load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open suite file " + path.string());
  try {
    return suite_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw EvalError(path.string() + ": " + e.what());
  }
}

namespace {

std::vector<int> suite_classes(const SuiteSpec& s) {
  if (!s.classes.empty()) return s.classes;
  std::vector<int> all;
  for (const auto& o : object_catalog()) all.push_back(o.class_id);
  return all;
}

Placement upright(int class_id, double x, double y, double yaw) {
  const auto& oc = catalog_object(class_id);
  return Placement{class_id, RigidTransform(Rot3::about_z(yaw), Vec3(x, y, oc.dims.z() / 2.0)),
                   "procedural:" + oc.name};
}

// Footprint rectangle overlap (separating axis test in the table plane).
bool footprints_overlap(const Placement& a, const Placement& b, double gap) {
  auto axes_of = [](const Placement& p) {
    const Mat3& r = p.pose.rotation().matrix();
    return std::array<Eigen::Vector2d, 2>{Eigen::Vector2d(r(0, 0), r(1, 0)), Eigen::Vector2d(r(0, 1), r(1, 1))};
  };
  const auto& da = catalog_object(a.class_id).dims;
  const auto& db = catalog_object(b.class_id).dims;
  const auto ax = axes_of(a), bx = axes_of(b);
  const Eigen::Vector2d d(b.pose.translation().x() - a.pose.translation().x(),
                          b.pose.translation().y() - a.pose.translation().y());
  const std::array<double, 2> ha{da.x() / 2 + gap / 2, da.y() / 2 + gap / 2};
  const std::array<double, 2> hb{db.x() / 2 + gap / 2, db.y() / 2 + gap / 2};
  for (const auto& axis : {ax[0], ax[1], bx[0], bx[1]}) {
    const double ra = ha[0] * std::abs(ax[0].dot(axis)) + ha[1] * std::abs(ax[1].dot(axis));
    const double rb = hb[0] * std::abs(bx[0].dot(axis)) + hb[1] * std::abs(bx[1].dot(axis));
    if (std::abs(d.dot(axis)) > ra + rb) return false;
  }
  return true;
}

SimWorld base_world(double sigma, uint64_t seed) {
  SimWorld w = default_world();
  w.noise_sigma = sigma;
  w.seed = seed;
  return w;
}

std::string fmt_id(const char* f, int a, int b, int c) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

}  // namespace

std::vector<Scenario> generate_turntable_suite(const SuiteSpec& spec) {
  const auto classes = suite_classes(spec);
  std::vector<Scenario> out;
  out.reserve(classes.size() * static_cast<size_t>(spec.rotations * spec.repeats));
  uint64_t index = 0;
  for (int cls : classes) {
    for (int r = 0; r < spec.rotations; ++r) {
      for (int p = 0; p < spec.repeats; ++p, ++index) {
        std::mt19937_64 rng(derive_seed(spec.seed, "jitter", index));
        std::uniform_real_distribution<double> jit(-spec.jitter, spec.jitter);
        double jx = 0.0, jy = 0.0;
        if (p > 0) {
          jx = jit(rng);
          jy = jit(rng);
        }
        const double yaw = 2.0 * M_PI * r / spec.rotations;
        Scenario sc;
        sc.id = fmt_id("tt-c%d-r%02d-p%03d", cls, r, p);
        sc.noise_seed = derive_seed(spec.seed, "noise", index);
        sc.world = base_world(spec.noise_sigma, sc.noise_seed);
        sc.world.objects.push_back(upright(cls, spec.table_x + jx, spec.table_y + jy, yaw));
        sc.target = 0;

        // Occluders stand on the camera side of the target.
        std::mt19937_64 orng(derive_seed(spec.seed, "occluder", index));
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        const auto& tdims = catalog_object(cls).dims;
        for (int k = 0; k < spec.occluders; ++k) {
          int occ = (cls + k) % 9 + 1;
          if (occ == cls) occ = occ % 9 + 1;
          const auto& odims = catalog_object(occ).dims;
          const double dist = std::hypot(tdims.x(), tdims.y()) / 2 + std::hypot(odims.x(), odims.y()) / 2 + 0.01;
          const double dir = M_PI + (uni(orng) - 0.5) * deg2rad(120.0);
          sc.world.objects.push_back(upright(occ, spec.table_x + jx + dist * std::cos(dir),
                                             spec.table_y + jy + dist * std::sin(dir), 2.0 * M_PI * uni(orng)));
        }
        sc.world.resolve_meshes();
        sc.gt = {cls, sc.world.objects[0].pose, r, p, spec.noise_sigma, spec.occluders > 0};
        out.push_back(std::move(sc));
      }
    }
  }
  return out;
}

std::vector<Scenario> generate_clutter_suite(const SuiteSpec& spec) {
  auto classes = suite_classes(spec);
  if (static_cast<int>(classes.size()) < spec.objects_per_scene)
    throw EvalError("clutter suite needs at least objects_per_scene distinct classes");
  std::vector<Scenario> out;
  for (int s = 0; s < spec.scenes; ++s) {
    std::mt19937_64 rng(derive_seed(spec.seed, "clutter", static_cast<uint64_t>(s)));
    std::vector<int> pick = classes;
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(static_cast<size_t>(spec.objects_per_scene));
    std::uniform_real_distribution<double> ux(spec.table_x - 0.3, spec.table_x + 0.3);
    std::uniform_real_distribution<double> uy(spec.table_y - 0.3, spec.table_y + 0.3);
    std::uniform_real_distribution<double> uyaw(0.0, 2.0 * M_PI);
    std::vector<Placement> placed;
    for (int cls : pick) {
      bool done = false;
      for (int attempt = 0; attempt < 2000 && !done; ++attempt) {
        const Placement cand = upright(cls, ux(rng), uy(rng), uyaw(rng));
        done = std::none_of(placed.begin(), placed.end(),
                            [&](const Placement& o) { return footprints_overlap(cand, o, 0.01); });
        if (done) placed.push_back(cand);
      }
      if (!done) throw EvalError("could not place object without overlap in clutter scene " + std::to_string(s));
    }
    const uint64_t noise_seed = derive_seed(spec.seed, "noise", static_cast<uint64_t>(s));
    SimWorld world = base_world(spec.noise_sigma, noise_seed);
    world.objects = placed;
    world.resolve_meshes();
    for (size_t k = 0; k < placed.size(); ++k) {
      Scenario sc;
      sc.id = fmt_id("cl-s%03d-o%d-c%d", s, static_cast<int>(k), placed[k].class_id);
      sc.world = world;
      sc.target = k;
      sc.noise_seed = noise_seed;
      sc.gt = {placed[k].class_id, placed[k].pose, 0, s, spec.noise_sigma, true};
      out.push_back(std::move(sc));
    }
  }
  return out;
}

std::vector<Scenario> generate_suite(const SuiteSpec& spec) {
  return spec.kind == "clutter" ? generate_clutter_suite(spec) : generate_turntable_suite(spec);
}

// ---------------------------------------------------------------------------
// Benchmark

const char* to_string(ScenarioStatus s) {
  switch (s) {
    case ScenarioStatus::ok: return "ok";
    case ScenarioStatus::not_detected: return "not_detected";
    case ScenarioStatus::no_depth: return "no_depth";
    case ScenarioStatus::no_hypothesis: return "no_hypothesis";
    case ScenarioStatus::failed_precondition: return "failed_precondition";
  }
  return "?";
}

ModelRegistry train_catalog_models(const std::vector<int>& class_ids, const TrainOptions& opts) {
  ModelRegistry reg;
  for (int c : class_ids) {
    if (!reg.count(c)) reg.emplace(c, train_model(catalog_object(c).mesh, opts));
  }
  return reg;
}

ScenarioResult run_scenario(const Scenario& sc, const ModelRegistry& models, const BenchmarkOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  ScenarioResult res;
  res.id = sc.id;
  res.class_id = sc.gt.class_id;
  const auto mit = models.find(sc.gt.class_id);
  if (mit == models.end()) {
    res.status = ScenarioStatus::failed_precondition;
    res.reason = "no model space for class " + std::to_string(sc.gt.class_id);
    return res;
  }
  const ModelFeatureSpace& space = mit->second;
  const SimWorld& world = sc.world;
  std::mt19937_64 rng(sc.noise_seed);

  const Capture top = sim_capture(world, CameraId::top, world.initial_flange, rng);
  const auto dets = synthetic_detect(world, world.top.intr, top.camera_pose);
  const Eigen::Vector2d gt_px =
      world.top.intr.project(top.camera_pose.inverse().apply(sc.gt.pose_gt.translation()));
  const Detection* det = nullptr;
  for (const auto& d : dets) {
    if (d.class_id != sc.gt.class_id) continue;
    if (!det || (d.bbox.center() - gt_px).norm() < (det->bbox.center() - gt_px).norm()) det = &d;
  }
  if (!det) {
    res.status = ScenarioStatus::not_detected;
    res.reason = "target not in the top camera view";
    return res;
  }

  Vec3 location;
  try {
    location = map_pixel_to_3d(det->bbox.center(), zmin_in_region(top.depth, det->bbox), world.top.intr);
  } catch (const NoDepthError& e) {
    res.status = ScenarioStatus::no_depth;
    res.reason = e.what();
    return res;
  }
  const RigidTransform cam = compute_approach_pose({location, det->class_id}, world.calib.standoff, world.calib);
  const RigidTransform flange = cam * world.calib.hand_cam_to_flange->inverse();
  const Capture hand = sim_capture(world, CameraId::hand, flange, rng);

  PointCloud cloud;
  try {
    cloud = depth_to_cloud(hand.depth, world.hand.intr);
  } catch (const PointCloudError& e) {
    res.status = ScenarioStatus::no_depth;
    res.reason = e.what();
    return res;
  }

  EstimateOptions eo = opts.estimate;
  eo.crop_seed = crop_center(hand.camera_pose.inverse().apply(top.camera_pose.apply(location)),
                             space.model_diameter);
  eo.crop_dims = Vec3::Constant(space.model_diameter);
  eo.margin = world.calib.margin;
  PoseEstimate est;
  try {
    est = estimate_pose(cloud, space, eo);
  } catch (const std::exception& e) {
    res.status = ScenarioStatus::no_hypothesis;
    res.reason = e.what();
    return res;
  }

  const RigidTransform& gt = sc.gt.pose_gt;
  res.pose_est = hand.camera_pose * est.pose;
  res.t_err = (res.pose_est.translation() - gt.translation()).norm();
  res.r_err = rotation_angle(gt.rotation(), res.pose_est.rotation());
  const auto pts = space.model_cloud.positions();
  res.add = add_metric(pts, gt, res.pose_est);
  res.correct_5cm5deg = pose_correct_ncm_ndeg(gt, res.pose_est, 5, 5);
  res.correct_3cm3deg = pose_correct_ncm_ndeg(gt, res.pose_est, 3, 3);
  res.correct_1cm3deg = pose_correct_ncm_ndeg(gt, res.pose_est, 1, 3);
  res.correct_add = add_correct(res.add, space.model_diameter);
  const Vec3 dt = res.pose_est.translation() - gt.translation();
  const auto e = rot_to_euler(gt.rotation().transpose() * res.pose_est.rotation()).angles;
  res.axis = {dt.x(), dt.y(), dt.z(), e.rx, e.ry, e.rz};
  res.votes = est.votes;
  res.refined = est.refined;
  res.cropped = est.cropped;
  res.scene_points = est.scene_points;
  res.match_ms = est.match_ms;

  if (opts.compare_uncropped) {
    EstimateOptions full = eo;
    full.crop_seed.reset();
    res.has_uncropped = true;
    try {
      const auto e2 = estimate_pose(cloud, space, full);
      res.uncropped_correct_5cm5deg = pose_correct_ncm_ndeg(gt, hand.camera_pose * e2.pose, 5, 5);
      res.uncropped_scene_points = e2.scene_points;
      res.uncropped_match_ms = e2.match_ms;
    } catch (const std::exception&) {
      res.uncropped_correct_5cm5deg = false;
    }
  }
  res.total_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

TimingStats timing_stats(const std::vector<double>& ms) {
  TimingStats t;
  t.n = ms.size();
  if (ms.empty()) return t;
  t.mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  t.min = *std::min_element(ms.begin(), ms.end());
  t.max = *std::max_element(ms.begin(), ms.end());
  return t;
}

EvalReport run_benchmark(const std::vector<Scenario>& suite, const ModelRegistry& models,
                         const BenchmarkOptions& opts) {
  EvalReport rep;
  rep.results.resize(suite.size());
  auto worker = [&](size_t first, size_t step) {
    for (size_t i = first; i < suite.size(); i += step) rep.results[i] = run_scenario(suite[i], models, opts);
  };
  const size_t nthreads = std::clamp<size_t>(static_cast<size_t>(std::max(1, opts.threads)), 1, suite.size() ? suite.size() : 1);
  if (nthreads == 1) {
    worker(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker, t, nthreads);
  }
  std::stable_sort(rep.results.begin(), rep.results.end(),
                   [](const ScenarioResult& a, const ScenarioResult& b) { return a.id < b.id; });

  std::map<int, ClassStats> per;
  std::vector<double> crop_ms, full_ms, total_ms;
  for (const auto& r : rep.results) {
    auto& c = per[r.class_id];
    c.class_id = r.class_id;
    ++c.scenarios;
    if (r.status == ScenarioStatus::failed_precondition) {
      ++c.failed_precondition;
      continue;
    }
    if (r.status != ScenarioStatus::ok) {
      ++c.failures;
      continue;
    }
    ++c.successes;
    c.n_5cm5deg += r.correct_5cm5deg;
    c.n_3cm3deg += r.correct_3cm3deg;
    c.n_1cm3deg += r.correct_1cm3deg;
    c.n_add += r.correct_add;
    if (r.correct_3cm3deg && !r.correct_5cm5deg) ++rep.monotonicity_violations;
    crop_ms.push_back(r.match_ms);
    total_ms.push_back(r.total_ms);
    if (r.has_uncropped) full_ms.push_back(r.uncropped_match_ms);
  }
  size_t counted = 0;
  for (auto& [id, c] : per) {
    c.name = std::to_string(id);
    for (const auto& oc : object_catalog())
      if (oc.class_id == id) c.name = oc.name;
    const auto mit = models.find(id);
    if (mit != models.end()) c.add_model_points = mit->second.model_size();
    c.evaluated = c.scenarios - c.failed_precondition;
    if (c.evaluated > 0) {
      const double n = static_cast<double>(c.evaluated);
      c.rate_5cm5deg = c.n_5cm5deg / n;
      c.rate_3cm3deg = c.n_3cm3deg / n;
      c.rate_1cm3deg = c.n_1cm3deg / n;
      c.rate_add = c.n_add / n;
      rep.avg_5cm5deg += c.rate_5cm5deg;
      rep.avg_3cm3deg += c.rate_3cm3deg;
      rep.avg_1cm3deg += c.rate_1cm3deg;
      rep.avg_add += c.rate_add;
      ++counted;
    }
    rep.classes.push_back(c);
  }
  if (counted > 0) {
    const double n = static_cast<double>(counted);
    rep.avg_5cm5deg /= n;
    rep.avg_3cm3deg /= n;
    rep.avg_1cm3deg /= n;
    rep.avg_add /= n;
  }
  rep.match_cropped = timing_stats(crop_ms);
  rep.match_uncropped = timing_stats(full_ms);
  rep.total = timing_stats(total_ms);
  return rep;
}

namespace {

json timing_json(const TimingStats& t) {
  return json{{"n", t.n}, {"mean_ms", t.mean}, {"min_ms", t.min}, {"max_ms", t.max}};
}

}  // namespace

json EvalReport::to_json(bool include_timing) const {
  json classes_j = json::array();
  for (const auto& c : classes) {
    classes_j.push_back({{"class_id", c.class_id},
                         {"name", c.name},
                         {"scenarios", c.scenarios},
                         {"successes", c.successes},
                         {"failures", c.failures},
                         {"failed_precondition", c.failed_precondition},
                         {"evaluated", c.evaluated},
                         {"correct_5cm5deg", c.n_5cm5deg},
                         {"correct_3cm3deg", c.n_3cm3deg},
                         {"correct_1cm3deg", c.n_1cm3deg},
                         {"correct_add", c.n_add},
                         {"rate_5cm5deg", c.rate_5cm5deg},
                         {"rate_3cm3deg", c.rate_3cm3deg},
                         {"rate_1cm3deg", c.rate_1cm3deg},
                         {"rate_add", c.rate_add},
                         {"add_model_points", c.add_model_points}});
  }
  json results_j = json::array();
  for (const auto& r : results) {
    json e{{"id", r.id}, {"class_id", r.class_id}, {"status", to_string(r.status)}};
    if (!r.reason.empty()) e["reason"] = r.reason;
    if (r.status == ScenarioStatus::ok) {
      e["t_err_m"] = r.t_err;
      e["r_err_deg"] = rad2deg(r.r_err);
      e["add_m"] = r.add;
      e["correct_5cm5deg"] = r.correct_5cm5deg;
      e["correct_3cm3deg"] = r.correct_3cm3deg;
      e["correct_1cm3deg"] = r.correct_1cm3deg;
      e["correct_add"] = r.correct_add;
      e["votes"] = r.votes;
      e["refined"] = r.refined;
      e["cropped"] = r.cropped;
      e["scene_points"] = r.scene_points;
      e["pose"] = transform_to_json(r.pose_est);
      if (r.has_uncropped) {
        e["uncropped_correct_5cm5deg"] = r.uncropped_correct_5cm5deg;
        e["uncropped_scene_points"] = r.uncropped_scene_points;
      }
      if (include_timing) {
        e["match_ms"] = r.match_ms;
        e["total_ms"] = r.total_ms;
        if (r.has_uncropped) e["uncropped_match_ms"] = r.uncropped_match_ms;
      }
    }
    results_j.push_back(std::move(e));
  }
  json j{{"classes", classes_j},
         {"average", {{"rate_5cm5deg", avg_5cm5deg},
                      {"rate_3cm3deg", avg_3cm3deg},
                      {"rate_1cm3deg", avg_1cm3deg},
                      {"rate_add", avg_add}}},
         {"monotonicity_violations", monotonicity_violations},
         {"results", results_j}};
  if (include_timing) {
    j["timing"] = {{"match_cropped", timing_json(match_cropped)},
                   {"match_uncropped", timing_json(match_uncropped)},
                   {"total", timing_json(total)}};
  }
  return j;
}

std::string EvalReport::text_table(bool include_timing) const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-8s %5s %5s %5s %5s %9s %9s %9s %9s\n", "class", "n", "ok", "fail", "skip",
                "5cm5deg", "3cm3deg", "1cm3deg", "ADD");
  os << line;
  for (const auto& c : classes) {
    std::snprintf(line, sizeof(line), "%-8s %5zu %5zu %5zu %5zu %8.2f%% %8.2f%% %8.2f%% %8.2f%%\n", c.name.c_str(),
                  c.scenarios, c.successes, c.failures, c.failed_precondition, 100 * c.rate_5cm5deg,
                  100 * c.rate_3cm3deg, 100 * c.rate_1cm3deg, 100 * c.rate_add);
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-8s %5s %5s %5s %5s %8.2f%% %8.2f%% %8.2f%% %8.2f%%\n", "average", "", "", "",
                "", 100 * avg_5cm5deg, 100 * avg_3cm3deg, 100 * avg_1cm3deg, 100 * avg_add);
  os << line;
  if (include_timing) {
    auto row = [&](const char* name, const TimingStats& t) {
      std::snprintf(line, sizeof(line), "%-16s n=%-5zu mean %8.1f ms  min %8.1f ms  max %8.1f ms\n", name, t.n,
                    t.mean, t.min, t.max);
      os << line;
    };
    os << "\n";
    row("match (crop)", match_cropped);
    if (match_uncropped.n > 0) row("match (full)", match_uncropped);
    row("scenario total", total);
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Histograms

double Histogram::center(size_t bin) const { return (static_cast<double>(bin) - half_bins) * width; }

size_t Histogram::bin_of(double v) const {
  const double b = std::floor(v / width + 0.5) + half_bins;
  return static_cast<size_t>(std::clamp(b, 0.0, 2.0 * half_bins));
}

std::vector<Histogram> error_distributions(const std::vector<ScenarioResult>& results, const std::string& metric,
                                           double t_width, double r_width, int half_bins) {
  if (metric != "5cm5deg" && metric != "3cm3deg" && metric != "add")
    throw EvalError("unknown metric '" + metric + "' (5cm5deg, 3cm3deg, add)");
  if (!(t_width > 0.0) || !(r_width > 0.0) || half_bins < 0) throw EvalError("bad histogram binning");
  std::vector<Histogram> h;
  for (const char* axis : {"x", "y", "z", "rx", "ry", "rz"}) {
    const bool rot = axis[0] == 'r';
    h.push_back({axis, rot ? r_width : t_width, half_bins, std::vector<size_t>(2 * half_bins + 1, 0)});
  }
  for (const auto& r : results) {
    if (r.status != ScenarioStatus::ok) continue;
    const bool ok = metric == "5cm5deg" ? r.correct_5cm5deg : metric == "3cm3deg" ? r.correct_3cm3deg : r.correct_add;
    if (!ok) continue;
    const double v[6] = {r.axis.x, r.axis.y, r.axis.z, r.axis.rx, r.axis.ry, r.axis.rz};
    for (int k = 0; k < 6; ++k) ++h[k].counts[h[k].bin_of(v[k])];
  }
  return h;
}

std::string histograms_csv(const std::vector<Histogram>& hists) {
  std::ostringstream os;
  os << "axis,bin_center,count\n";
  char buf[64];
  for (const auto& h : hists) {
    for (size_t b = 0; b < h.counts.size(); ++b) {
      std::snprintf(buf, sizeof(buf), "%.6g", h.center(b));
      os << h.axis << "," << buf << "," << h.counts[b] << "\n";
    }
  }
  return os.str();
}

}  // namespace ppfpose
