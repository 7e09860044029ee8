#include "ppfpose/ppf.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <thread>

#include <Eigen/Geometry>

namespace ppfpose {

namespace {

constexpr int kMaxAngleBins = 1 << 10;

// Angle between two vectors; atan2 keeps full precision near 0 and pi.
double vec_angle(const Vec3& a, const Vec3& b) { return std::atan2(a.cross(b).norm(), a.dot(b)); }

std::optional<PPFDescriptor> try_ppf(const Vec3& p1, const Vec3& n1, const Vec3& p2, const Vec3& n2) {
  const Vec3 d = p2 - p1;
  const double len = d.norm();
  if (len < 1e-9) return std::nullopt;
  return PPFDescriptor{len, vec_angle(n1, d), vec_angle(n2, d), vec_angle(n1, n2)};
}

std::optional<double> try_alpha(const RigidTransform& frame, const Vec3& other) {
  const Vec3 q = frame.apply(other);
  if (std::abs(q.y()) < 1e-12 && std::abs(q.z()) < 1e-12) return std::nullopt;
  return wrap_angle(std::atan2(q.z(), q.y()));
}

uint64_t mix64(uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdull;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ull;
  x ^= x >> 33;
  return x;
}

std::vector<RigidTransform> frames_of(const PointCloud& cloud) {
  std::vector<RigidTransform> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points) out.push_back(reference_frame(p));
  return out;
}

unsigned resolve_threads(unsigned requested) {
  if (requested == 0) requested = std::max(1u, std::thread::hardware_concurrency());
  return requested;
}

}  // namespace

// ---------------------------------------------------------------------------
// Features

uint64_t QuantizedKey::packed() const {
  return (static_cast<uint64_t>(bins[0]) << 30) | (static_cast<uint64_t>(bins[1] & 0x3ff) << 20) |
         (static_cast<uint64_t>(bins[2] & 0x3ff) << 10) | static_cast<uint64_t>(bins[3] & 0x3ff);
}

QuantizedKey QuantizedKey::unpack(uint64_t k) {
  QuantizedKey q;
  q.bins[0] = static_cast<uint32_t>(k >> 30);
  q.bins[1] = static_cast<uint32_t>((k >> 20) & 0x3ff);
  q.bins[2] = static_cast<uint32_t>((k >> 10) & 0x3ff);
  q.bins[3] = static_cast<uint32_t>(k & 0x3ff);
  return q;
}

void MatchParams::validate() const {
  if (!(dist_step_rel > 0.0)) throw PpfError("dist_step_rel must be > 0");
  if (n_angle_bins <= 0 || n_angle_bins > kMaxAngleBins) throw PpfError("n_angle_bins must be in [1, 1024]");
  if (scene_ref_stride <= 0) throw PpfError("scene_ref_stride must be > 0");
  if (!(cluster_t_rel > 0.0)) throw PpfError("cluster_t_rel must be > 0");
  if (!(cluster_r > 0.0)) throw PpfError("cluster_r must be > 0");
  if (!(peak_keep_rel > 0.0 && peak_keep_rel <= 1.0)) throw PpfError("peak_keep_rel must be in (0, 1]");
}

PPFDescriptor compute_ppf(const Vec3& p1, const Vec3& n1, const Vec3& p2, const Vec3& n2) {
  auto f = try_ppf(p1, n1, p2, n2);
  if (!f) throw DegeneratePairError("point pair is degenerate (|d| < 1e-9)");
  return *f;
}

QuantizedKey quantize(const PPFDescriptor& f, double diameter, const MatchParams& params) {
  const double dstep = params.dist_step_rel * diameter;
  const double astep = params.angle_step();
  auto abin = [&](double a) {
    const auto b = static_cast<uint32_t>(std::floor(std::max(0.0, a) / astep));
    return std::min<uint32_t>(b, static_cast<uint32_t>(params.n_angle_bins - 1));
  };
  QuantizedKey k;
  k.bins[0] = static_cast<uint32_t>(std::min(std::floor(f.dist / dstep), 4.0e9));
  k.bins[1] = abin(f.a1);
  k.bins[2] = abin(f.a2);
  k.bins[3] = abin(f.a3);
  return k;
}

RigidTransform reference_frame(const OrientedPoint& ref) {
  const Vec3 n = ref.normal.normalized();
  const Vec3 x = Vec3::UnitX();
  const Vec3 axis = n.cross(x);
  const double s = axis.norm();
  const double c = n.dot(x);
  Rot3 r;
  if (s < 1e-12) {
    r = c > 0.0 ? Rot3::identity() : Rot3::about_z(M_PI);
  } else {
    r = Rot3::about_axis(axis, std::atan2(s, c));
  }
  return RigidTransform(r, -(r * ref.position));
}

double local_alpha(const RigidTransform& ref_frame, const Vec3& other_position) {
  auto a = try_alpha(ref_frame, other_position);
  if (!a) throw DegeneratePairError("alpha undefined: point lies on the reference normal line");
  return *a;
}

double local_alpha(const OrientedPoint& ref, const Vec3& other_position) {
  return local_alpha(reference_frame(ref), other_position);
}

uint32_t alpha_bin(double alpha_diff, int n_bins) {
  const double two_pi = 2.0 * M_PI;
  double d = std::fmod(alpha_diff, two_pi);
  if (d < 0.0) d += two_pi;
  const auto b = static_cast<int64_t>(std::floor(d / (two_pi / n_bins)));
  return static_cast<uint32_t>(std::clamp<int64_t>(b, 0, n_bins - 1));
}

RigidTransform pose_from_alignment(const RigidTransform& scene_frame, const RigidTransform& model_frame,
                                   double alpha) {
  return scene_frame.inverse() * RigidTransform(Rot3::about_x(alpha), Vec3::Zero()) * model_frame;
}

// ---------------------------------------------------------------------------
// FeatureTable

FeatureTable FeatureTable::build(std::vector<std::pair<uint64_t, ModelEntry>> items) {
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second.ref_index < b.second.ref_index;
  });
  FeatureTable t;
  t.entries_.reserve(items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    if (i == 0 || items[i].first != items[i - 1].first) {
      t.buckets_.push_back({items[i].first, static_cast<uint32_t>(i), 0});
    }
    ++t.buckets_.back().count;
    t.entries_.push_back(items[i].second);
  }
  t.index();
  return t;
}

void FeatureTable::index() {
  size_t cap = 16;
  while (cap < buckets_.size() * 2) cap <<= 1;
  slots_.assign(cap, -1);
  const size_t mask = cap - 1;
  for (size_t b = 0; b < buckets_.size(); ++b) {
    size_t s = mix64(buckets_[b].key) & mask;
    while (slots_[s] >= 0) s = (s + 1) & mask;
    slots_[s] = static_cast<int32_t>(b);
  }
}

std::span<const ModelEntry> FeatureTable::lookup(uint64_t key) const {
  if (slots_.empty()) return {};
  const size_t mask = slots_.size() - 1;
  for (size_t s = mix64(key) & mask;; s = (s + 1) & mask) {
    const int32_t b = slots_[s];
    if (b < 0) return {};
    const Bucket& bk = buckets_[static_cast<size_t>(b)];
    if (bk.key == key) return {entries_.data() + bk.offset, bk.count};
  }
}

double FeatureTable::load_factor() const {
  return slots_.empty() ? 0.0 : static_cast<double>(buckets_.size()) / static_cast<double>(slots_.size());
}

// ---------------------------------------------------------------------------
// Model space

ModelFeatureSpace build_model_space(const PointCloud& model, const MatchParams& params, double diameter) {
  params.validate();
  if (model.size() < 2) throw PpfError("model needs at least 2 points");
  if (!model.has_normals) throw PpfError("model cloud has no normals; estimate them first");
  model.validate();

  ModelFeatureSpace space;
  space.params = params;
  space.model_cloud = model;
  const auto pos = model.positions();
  space.model_dims = bbox_dims(pos);
  space.model_diameter = diameter > 0.0 ? diameter : bbox_diameter(space.model_dims);
  if (!(space.model_diameter > 0.0)) throw PpfError("model has zero extent");

  const auto frames = frames_of(model);
  std::vector<std::pair<uint64_t, ModelEntry>> items;
  items.reserve(model.size() * (model.size() - 1));
  for (size_t i = 0; i < model.size(); ++i) {
    const auto& pi = model.points[i];
    for (size_t j = 0; j < model.size(); ++j) {
      if (i == j) continue;
      const auto& pj = model.points[j];
      const auto f = try_ppf(pi.position, pi.normal, pj.position, pj.normal);
      const auto a = f ? try_alpha(frames[i], pj.position) : std::nullopt;
      if (!f || !a) {
        ++space.degenerate_pairs;
        continue;
      }
      items.emplace_back(quantize(*f, space.model_diameter, params).packed(),
                         ModelEntry{static_cast<uint32_t>(i), *a});
    }
  }
  space.table = FeatureTable::build(std::move(items));
  return space;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

static_assert(std::endian::native == std::endian::little, "model files are written little-endian");

constexpr char kMagic[4] = {'P', 'P', 'F', '1'};
constexpr uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_vec(const Vec3& v) {
    put(v.x());
    put(v.y());
    put(v.z());
  }
  std::vector<uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> b) : b_(b) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > b_.size()) throw ModelFileError("model file truncated");
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  Vec3 get_vec() {
    const double x = get<double>(), y = get<double>(), z = get<double>();
    return {x, y, z};
  }
  bool at_end() const { return pos_ == b_.size(); }

 private:
  std::span<const uint8_t> b_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<uint8_t> serialize_model_space(const ModelFeatureSpace& space) {
  Writer w;
  for (char c : kMagic) w.put(c);
  w.put(kVersion);
  const auto& p = space.params;
  w.put(p.dist_step_rel);
  w.put(static_cast<int32_t>(p.n_angle_bins));
  w.put(static_cast<int32_t>(p.scene_ref_stride));
  w.put(p.cluster_t_rel);
  w.put(p.cluster_r);
  w.put(p.peak_keep_rel);
  w.put(space.model_diameter);
  w.put_vec(space.model_dims);
  w.put(static_cast<uint64_t>(space.degenerate_pairs));
  w.put(static_cast<uint64_t>(space.model_cloud.size()));
  for (const auto& pt : space.model_cloud.points) {
    w.put_vec(pt.position);
    w.put_vec(pt.normal);
  }
  const auto& t = space.table;
  w.put(static_cast<uint64_t>(t.key_count()));
  w.put(static_cast<uint64_t>(t.entry_count()));
  for (const auto& b : t.buckets()) {
    w.put(b.key);
    w.put(b.count);
    for (uint32_t i = 0; i < b.count; ++i) {
      const auto& e = t.entries()[b.offset + i];
      w.put(e.ref_index);
      w.put(e.alpha);
    }
  }
  return w.take();
}

ModelFeatureSpace deserialize_model_space(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  for (char c : kMagic) {
    if (r.get<char>() != c) throw ModelFileError("bad magic: not a PPF1 model file");
  }
  const auto version = r.get<uint32_t>();
  if (version != kVersion) throw ModelFileError("unsupported model file version " + std::to_string(version));
  ModelFeatureSpace s;
  s.params.dist_step_rel = r.get<double>();
  s.params.n_angle_bins = r.get<int32_t>();
  s.params.scene_ref_stride = r.get<int32_t>();
  s.params.cluster_t_rel = r.get<double>();
  s.params.cluster_r = r.get<double>();
  s.params.peak_keep_rel = r.get<double>();
  try {
    s.params.validate();
  } catch (const PpfError& e) {
    throw ModelFileError(std::string("bad params header: ") + e.what());
  }
  s.model_diameter = r.get<double>();
  s.model_dims = r.get_vec();
  s.degenerate_pairs = r.get<uint64_t>();
  const auto n = r.get<uint64_t>();
  if (n > bytes.size()) throw ModelFileError("model file truncated");
  s.model_cloud.frame_id = "model";
  s.model_cloud.source = CloudSource::mesh_sampled;
  s.model_cloud.has_normals = true;
  s.model_cloud.points.resize(n);
  for (auto& pt : s.model_cloud.points) {
    pt.position = r.get_vec();
    pt.normal = r.get_vec();
  }
  const auto nkeys = r.get<uint64_t>();
  const auto nentries = r.get<uint64_t>();
  if (nentries > bytes.size() || nkeys > bytes.size()) throw ModelFileError("model file truncated");
  std::vector<std::pair<uint64_t, ModelEntry>> items;
  items.reserve(nentries);
  for (uint64_t k = 0; k < nkeys; ++k) {
    const auto key = r.get<uint64_t>();
    const auto cnt = r.get<uint32_t>();
    for (uint32_t i = 0; i < cnt; ++i) {
      ModelEntry e;
      e.ref_index = r.get<uint32_t>();
      e.alpha = r.get<double>();
      if (e.ref_index >= n) throw ModelFileError("table entry references a missing model point");
      items.emplace_back(key, e);
    }
  }
  if (items.size() != nentries) throw ModelFileError("entry count mismatch");
  if (!r.at_end()) throw ModelFileError("trailing bytes after table");
  s.table = FeatureTable::build(std::move(items));
  return s;
}

void save_model_space(const std::filesystem::path& path, const ModelFeatureSpace& space) {
  const auto bytes = serialize_model_space(space);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ModelFileError("cannot write model file: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ModelFileError("write failed: " + path.string());
}

ModelFeatureSpace load_model_space(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ModelFileError("cannot open model file: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_model_space(bytes);
}

// ---------------------------------------------------------------------------
// Voting

namespace {

struct SceneContext {
  const PointCloud& scene;
  const ModelFeatureSpace& space;
  std::vector<RigidTransform> model_frames;
  double max_dist;
};

// One voting scene pair of the current reference.
struct PairVotes {
  std::span<const ModelEntry> entries;
  double alpha_scene;
};

void accumulate(const SceneContext& ctx, size_t ref, const RigidTransform& ref_frame, VoteAccumulator& acc,
                std::vector<PairVotes>& pairs) {
  const auto& scene = ctx.scene;
  const auto& sr = scene.points[ref];
  const int nb = acc.bins;
  const double two_pi = 2.0 * M_PI;
  const double max_d2 = ctx.max_dist * ctx.max_dist;
  const double step = two_pi / nb;
  pairs.clear();
  for (size_t i = 0; i < scene.size(); ++i) {
    if (i == ref) continue;
    const auto& si = scene.points[i];
    if ((si.position - sr.position).squaredNorm() > max_d2) continue;
    const auto f = try_ppf(sr.position, sr.normal, si.position, si.normal);
    if (!f) continue;
    const auto a_s = try_alpha(ref_frame, si.position);
    if (!a_s) continue;
    const auto entries = ctx.space.table.lookup(quantize(*f, ctx.space.model_diameter, ctx.space.params));
    if (entries.empty()) continue;
    pairs.push_back({entries, *a_s});
    for (const auto& e : entries) {
      double d = *a_s - e.alpha;
      if (d < 0.0) d += two_pi;
      // d is already in [0, 2pi), where alpha_bin reduces to this.
      const auto b = std::min(static_cast<uint32_t>(std::floor(d / step)), static_cast<uint32_t>(nb - 1));
      ++acc.counts[static_cast<size_t>(e.ref_index) * static_cast<size_t>(nb) + b];
    }
  }
}

// Rotation angle for one peak cell: the densest window (an eighth of a bin
// wide) among the cell's alpha differences, averaged. Same-key votes from
// unrelated model pairs spread over the whole bin and would bias a plain mean.
double peak_alpha(const std::vector<PairVotes>& pairs, uint32_t row, uint32_t bin, int nb,
                  std::vector<double>& buf) {
  const double two_pi = 2.0 * M_PI;
  const double step = two_pi / nb;
  buf.clear();
  const auto by_ref = [](const ModelEntry& e, uint32_t r) { return e.ref_index < r; };
  for (const auto& p : pairs) {
    auto it = std::lower_bound(p.entries.begin(), p.entries.end(), row, by_ref);
    for (; it != p.entries.end() && it->ref_index == row; ++it) {
      double d = p.alpha_scene - it->alpha;
      if (d < 0.0) d += two_pi;
      const auto b = std::min(static_cast<uint32_t>(std::floor(d / step)), static_cast<uint32_t>(nb - 1));
      if (b == bin) buf.push_back(d);
    }
  }
  std::sort(buf.begin(), buf.end());
  const double width = step / 8.0;
  size_t best_lo = 0, best_hi = 0;
  for (size_t lo = 0, hi = 0; lo < buf.size(); ++lo) {
    while (hi < buf.size() && buf[hi] - buf[lo] <= width) ++hi;
    if (hi - lo > best_hi - best_lo) {
      best_lo = lo;
      best_hi = hi;
    }
  }
  double sum = 0.0;
  for (size_t k = best_lo; k < best_hi; ++k) sum += buf[k];
  return sum / static_cast<double>(best_hi - best_lo);
}

void peaks(const SceneContext& ctx, size_t ref, const RigidTransform& ref_frame, const VoteAccumulator& acc,
           const std::vector<PairVotes>& pairs, std::vector<PoseHypothesis>& out) {
  const uint32_t mx = *std::max_element(acc.counts.begin(), acc.counts.end());
  if (mx == 0) return;
  const double keep = ctx.space.params.peak_keep_rel * mx;
  std::vector<double> buf;
  for (size_t c = 0; c < acc.counts.size(); ++c) {
    const uint32_t v = acc.counts[c];
    if (v == 0 || static_cast<double>(v) < keep) continue;
    const size_t row = c / static_cast<size_t>(acc.bins);
    const auto bin = static_cast<uint32_t>(c % static_cast<size_t>(acc.bins));
    const double alpha = peak_alpha(pairs, static_cast<uint32_t>(row), bin, acc.bins, buf);
    PoseHypothesis h;
    h.pose = pose_from_alignment(ref_frame, ctx.model_frames[row], alpha);
    h.votes = v;
    h.cluster_size = 1;
    h.scene_ref = static_cast<uint32_t>(ref);
    h.model_ref = static_cast<uint32_t>(row);
    out.push_back(h);
  }
}

void check_inputs(const PointCloud& scene, const ModelFeatureSpace& space) {
  if (scene.empty()) throw PpfError("scene cloud is empty");
  if (!scene.has_normals) throw PpfError("scene cloud has no normals");
  if (space.table.entry_count() == 0) throw PpfError("model feature table is empty");
}

double max_table_dist(const ModelFeatureSpace& space) {
  uint32_t max_bin = 0;
  for (const auto& b : space.table.buckets()) max_bin = std::max(max_bin, QuantizedKey::unpack(b.key).bins[0]);
  // Any pair with a larger distance quantizes to a bin beyond every stored key.
  return (max_bin + 1.0) * space.params.dist_step_rel * space.model_diameter * (1.0 + 1e-9);
}

}  // namespace

VoteAccumulator vote_for_reference(const PointCloud& scene, size_t ref, const ModelFeatureSpace& space) {
  check_inputs(scene, space);
  if (ref >= scene.size()) throw PpfError("reference index out of range");
  SceneContext ctx{scene, space, {}, max_table_dist(space)};
  VoteAccumulator acc;
  acc.rows = space.model_size();
  acc.bins = space.params.n_angle_bins;
  acc.counts.assign(acc.rows * static_cast<size_t>(acc.bins), 0);
  std::vector<PairVotes> pairs;
  accumulate(ctx, ref, reference_frame(scene.points[ref]), acc, pairs);
  return acc;
}

std::vector<PoseHypothesis> vote_hypotheses(const PointCloud& scene, const ModelFeatureSpace& space,
                                            const MatchOptions& opts) {
  check_inputs(scene, space);
  SceneContext ctx{scene, space, frames_of(space.model_cloud), max_table_dist(space)};

  std::vector<size_t> refs;
  for (size_t r = 0; r < scene.size(); r += static_cast<size_t>(space.params.scene_ref_stride)) refs.push_back(r);

  // Each reference writes only its own slot, so merging is order-independent.
  std::vector<std::vector<PoseHypothesis>> per_ref(refs.size());
  auto worker = [&](size_t first, size_t step) {
    VoteAccumulator acc;
    acc.rows = space.model_size();
    acc.bins = space.params.n_angle_bins;
    std::vector<PairVotes> pairs;
    for (size_t k = first; k < refs.size(); k += step) {
      acc.counts.assign(acc.rows * static_cast<size_t>(acc.bins), 0);
      const auto frame = reference_frame(scene.points[refs[k]]);
      accumulate(ctx, refs[k], frame, acc, pairs);
      peaks(ctx, refs[k], frame, acc, pairs, per_ref[k]);
    }
  };
  const unsigned nthreads = std::min<unsigned>(resolve_threads(opts.threads), static_cast<unsigned>(refs.size()));
  if (nthreads <= 1) {
    worker(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < nthreads; ++t) pool.emplace_back(worker, t, nthreads);
  }

  std::vector<PoseHypothesis> all;
  for (auto& v : per_ref) all.insert(all.end(), v.begin(), v.end());
  // Within a reference, cells were emitted in (model ref, bin) order already.
  std::stable_sort(all.begin(), all.end(), [](const PoseHypothesis& a, const PoseHypothesis& b) {
    if (a.votes != b.votes) return a.votes > b.votes;
    return a.scene_ref < b.scene_ref;
  });
  return all;
}

std::vector<PoseHypothesis> match(const PointCloud& scene, const ModelFeatureSpace& space, const MatchOptions& opts) {
  auto raw = vote_hypotheses(scene, space, opts);
  return cluster_poses(std::move(raw), space.model_diameter, space.params);
}

// ---------------------------------------------------------------------------
// Clustering

std::vector<PoseHypothesis> cluster_poses(std::vector<PoseHypothesis> hyps, double diameter,
                                          const MatchParams& params) {
  std::stable_sort(hyps.begin(), hyps.end(), [](const PoseHypothesis& a, const PoseHypothesis& b) {
    if (a.votes != b.votes) return a.votes > b.votes;
    return a.scene_ref < b.scene_ref;
  });
  const double t_thresh = params.cluster_t_rel * diameter;

  struct Cluster {
    PoseHypothesis rep;
    Eigen::Quaterniond rep_q;
    Vec3 t_sum = Vec3::Zero();
    Eigen::Vector4d q_sum = Eigen::Vector4d::Zero();
    uint64_t votes = 0;
    uint32_t size = 0;
  };
  std::vector<Cluster> clusters;
  for (const auto& h : hyps) {
    Cluster* target = nullptr;
    for (auto& c : clusters) {
      if ((c.rep.pose.translation() - h.pose.translation()).norm() <= t_thresh &&
          rotation_angle(c.rep.pose.rotation(), h.pose.rotation()) <= params.cluster_r) {
        target = &c;
        break;
      }
    }
    if (!target) {
      clusters.push_back({h, h.pose.rotation().quaternion()});
      target = &clusters.back();
    }
    Eigen::Quaterniond q = h.pose.rotation().quaternion();
    if (q.dot(target->rep_q) < 0.0) q.coeffs() *= -1.0;
    const double w = h.votes;
    target->t_sum += w * h.pose.translation();
    target->q_sum += w * q.coeffs();
    target->votes += h.votes;
    ++target->size;
  }

  std::vector<PoseHypothesis> out;
  out.reserve(clusters.size());
  for (const auto& c : clusters) {
    PoseHypothesis h = c.rep;
    const double w = static_cast<double>(c.votes);
    Eigen::Quaterniond q;
    q.coeffs() = c.q_sum / w;
    h.pose = RigidTransform(Rot3::from_quaternion(q), c.t_sum / w);
    h.votes = static_cast<uint32_t>(c.votes);
    h.cluster_size = c.size;
    out.push_back(h);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const PoseHypothesis& a, const PoseHypothesis& b) { return a.votes > b.votes; });
  return out;
}

// ---------------------------------------------------------------------------
// ICP

namespace {

struct Correspondences {
  std::vector<Vec3> model;
  std::vector<Vec3> scene;
  double truncated_mse = 0.0;
};

Correspondences correspond(const PointCloud& scene, const KdTree& model_tree, const RigidTransform& pose,
                           double cutoff) {
  Correspondences c;
  const RigidTransform inv = pose.inverse();
  const double c2 = cutoff * cutoff;
  double sum = 0.0;
  for (const auto& s : scene.points) {
    const auto [idx, d2] = model_tree.nearest(inv.apply(s.position));
    if (d2 <= c2) {
      c.model.push_back(model_tree.point(idx));
      c.scene.push_back(s.position);
      sum += d2;
    } else {
      sum += c2;
    }
  }
  c.truncated_mse = sum / static_cast<double>(scene.size());
  return c;
}

RigidTransform kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  Eigen::Matrix3Xd a(3, src.size()), b(3, dst.size());
  for (size_t i = 0; i < src.size(); ++i) {
    a.col(static_cast<Eigen::Index>(i)) = src[i];
    b.col(static_cast<Eigen::Index>(i)) = dst[i];
  }
  const Mat4 m = Eigen::umeyama(a, b, false);
  return RigidTransform(Rot3::orthonormalize(m.block<3, 3>(0, 0)), Vec3(m.block<3, 1>(0, 3)));
}

}  // namespace

IcpResult refine_icp(const PointCloud& scene, const PointCloud& model, const RigidTransform& init,
                     const IcpOptions& opts) {
  if (!(opts.cutoff > 0.0)) throw PpfError("ICP cutoff must be > 0");
  if (scene.empty() || model.empty()) throw RefineFailedError("ICP needs non-empty scene and model");
  const KdTree tree(model.positions());

  IcpResult res;
  res.pose = init;
  auto corr = correspond(scene, tree, init, opts.cutoff);
  if (corr.model.size() < 3) {
    throw RefineFailedError("fewer than 3 correspondences at the initial pose");
  }
  res.mse = corr.truncated_mse;
  res.inliers = corr.model.size();
  res.mse_history.push_back(res.mse);

  for (int it = 0; it < opts.max_iterations && res.mse > 0.0; ++it) {
    const RigidTransform next = kabsch(corr.model, corr.scene);
    auto next_corr = correspond(scene, tree, next, opts.cutoff);
    if (next_corr.truncated_mse > res.mse || next_corr.model.size() < 3) break;
    const double rel = (res.mse - next_corr.truncated_mse) / res.mse;
    res.pose = next;
    res.mse = next_corr.truncated_mse;
    res.inliers = next_corr.model.size();
    res.iterations = it + 1;
    res.mse_history.push_back(res.mse);
    corr = std::move(next_corr);
    if (rel < opts.rel_mse_tol) break;
  }
  return res;
}

}  // namespace ppfpose
