#include "mast/synthbench.hpp"

#include "mast/errors.hpp"
#include "parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <random>

namespace mast {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(a ^ splitmix(b));
}

ObjectKind parse_object_kind(const std::string& s) {
  if (s == "unit-box") return ObjectKind::UnitBox;
  if (s == "box") return ObjectKind::Box;
  if (s == "cylinder") return ObjectKind::Cylinder;
  if (s == "blob") return ObjectKind::Blob;
  throw InvalidArgument("unknown object family: " + s);
}

std::string to_string(ObjectKind k) {
  switch (k) {
    case ObjectKind::UnitBox: return "unit-box";
    case ObjectKind::Box: return "box";
    case ObjectKind::Cylinder: return "cylinder";
    case ObjectKind::Blob: return "blob";
  }
  return "?";
}

std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::Source;
  if (s == "target") return Domain::Target;
  throw InvalidArgument("unknown domain: " + s);
}

namespace {

// Proper rotations among the signed permutation matrices: the 24 cube symmetries.
std::vector<RotationMatrix> cube_group() {
  std::vector<RotationMatrix> out;
  int perm[3] = {0, 1, 2};
  do {
    for (int signs = 0; signs < 8; ++signs) {
      Mat3 m = Mat3::Zero();
      for (int r = 0; r < 3; ++r) m(r, perm[r]) = (signs >> r) & 1 ? -1.0 : 1.0;
      if (m.determinant() > 0.0) out.push_back(m);
    }
  } while (std::next_permutation(perm, perm + 3));
  // Identity first.
  std::stable_partition(out.begin(), out.end(), [](const Mat3& m) { return m.isIdentity(); });
  return out;
}

std::vector<RotationMatrix> box_group() {
  return {Mat3::Identity(), Vec3(1, -1, -1).asDiagonal(), Vec3(-1, 1, -1).asDiagonal(),
          Vec3(-1, -1, 1).asDiagonal()};
}

std::vector<Vec3> box_points(const Vec3& half, int n, std::mt19937_64& rng) {
  std::vector<Vec3> pts;
  // Opposite corners first so that the diameter is present for any n >= 2.
  const int corner_order[8] = {0, 7, 1, 6, 2, 5, 3, 4};
  for (int c : corner_order) {
    if (static_cast<int>(pts.size()) == n) break;
    pts.emplace_back(c & 1 ? half.x() : -half.x(), c & 2 ? half.y() : -half.y(), c & 4 ? half.z() : -half.z());
  }
  const double areas[3] = {half.y() * half.z(), half.x() * half.z(), half.x() * half.y()};
  std::discrete_distribution<int> face({areas[0], areas[1], areas[2]});
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::bernoulli_distribution side(0.5);
  while (static_cast<int>(pts.size()) < n) {
    const int axis = face(rng);
    Vec3 p(sym(rng) * half.x(), sym(rng) * half.y(), sym(rng) * half.z());
    p[axis] = side(rng) ? half[axis] : -half[axis];
    pts.push_back(p);
  }
  return pts;
}

std::vector<Vec3> cylinder_points(double a, double b, double h, int n, std::mt19937_64& rng) {
  std::vector<Vec3> pts;
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> height(-h / 2.0, h / 2.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double side_area = std::numbers::pi * (a + b) * h;
  const double cap_area = 2.0 * std::numbers::pi * a * b;
  while (static_cast<int>(pts.size()) + 2 <= n) {
    const double t = angle(rng);
    Vec3 p;
    if (unit(rng) * (side_area + cap_area) < side_area) {
      p = Vec3(a * std::cos(t), b * std::sin(t), height(rng));
    } else {
      const double r = std::sqrt(unit(rng));
      p = Vec3(r * a * std::cos(t), r * b * std::sin(t), unit(rng) < 0.5 ? -h / 2.0 : h / 2.0);
    }
    // Pairs under the half turn about z make the cloud exactly 2-fold symmetric.
    pts.push_back(p);
    pts.emplace_back(-p.x(), -p.y(), p.z());
  }
  if (static_cast<int>(pts.size()) < n) pts.emplace_back(0.0, 0.0, h / 2.0);
  return pts;
}

std::vector<Vec3> blob_points(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> axis(0.05, 0.09);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const Vec3 axes(axis(rng), axis(rng), axis(rng));
  const double p1 = phase(rng), p2 = phase(rng), p3 = phase(rng);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Vec3> pts;
  while (static_cast<int>(pts.size()) < n) {
    Vec3 d(gauss(rng), gauss(rng), gauss(rng));
    if (d.norm() < 1e-9) continue;
    d.normalize();
    // Lumps with incommensurate phases break every rotational symmetry.
    const double r = 1.0 + 0.25 * std::sin(3.0 * d.x() + p1) + 0.2 * std::cos(2.0 * d.y() + p2) +
                     0.15 * std::sin(d.z() + d.x() + p3) + 0.2 * std::max(0.0, d.x() + d.y() + d.z());
    pts.push_back(r * d.cwiseProduct(axes));
  }
  return pts;
}

}  // namespace

ObjectModel make_object(ObjectKind kind, std::uint64_t seed, int n_points) {
  if (n_points < 4) throw InvalidArgument("make_object: at least 4 points are required");
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(kind) + 101));
  ObjectModel m;
  switch (kind) {
    case ObjectKind::UnitBox:
      m.points = box_points(Vec3(0.5, 0.5, 0.5), n_points, rng);
      m.symmetries = cube_group();
      break;
    case ObjectKind::Box: {
      std::uniform_real_distribution<double> side(0.06, 0.18);
      Vec3 half(side(rng), side(rng), side(rng));
      half /= 2.0;
      m.points = box_points(half, n_points, rng);
      m.symmetries = box_group();
      break;
    }
    case ObjectKind::Cylinder: {
      std::uniform_real_distribution<double> radius(0.05, 0.08);
      std::uniform_real_distribution<double> height(0.10, 0.18);
      const double a = radius(rng);
      m.points = cylinder_points(a, 0.6 * a, height(rng), n_points, rng);
      m.symmetries = {Mat3::Identity(), axis_angle(Vec3::UnitZ(), std::numbers::pi)};
      break;
    }
    case ObjectKind::Blob:
      m.points = blob_points(n_points, rng);
      m.symmetries = {Mat3::Identity()};
      break;
  }
  m.diameter = point_cloud_diameter(m.points);
  return m;
}

void DomainConfig::validate(std::size_t dim) const {
  if (!offset.empty() && offset.size() != dim) throw ConfigError("domain: offset length must match the observation");
  if (!(noise >= 0.0)) throw ConfigError("domain: noise must be non-negative");
  if (!(depth_noise >= 0.0)) throw ConfigError("domain: depth noise must be non-negative");
  if (!(offset_spread >= 0.0 && offset_spread <= 1.0)) throw ConfigError("domain: offset spread must lie in [0, 1]");
  if (!(dropout >= 0.0 && dropout <= 1.0)) throw ConfigError("domain: dropout must lie in [0, 1]");
}

std::vector<double> make_domain_offset(double magnitude, int begin, int count, std::uint64_t seed, int dim) {
  if (begin < 0 || count < 0 || begin + count > dim) throw InvalidArgument("make_domain_offset: bad channel range");
  std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution sign(0.5);
  for (int c = begin; c < begin + count; ++c) out[static_cast<std::size_t>(c)] = sign(rng) ? magnitude : -magnitude;
  return out;
}

std::vector<Vec3> select_keypoints(const ObjectModel& model, int k) {
  if (model.points.empty()) throw InvalidArgument("select_keypoints: empty model");
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : model.points) centroid += p;
  centroid /= static_cast<double>(model.points.size());
  const std::size_t n = model.points.size();
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = (model.points[i] - centroid).squaredNorm();
  std::vector<Vec3> out;
  while (out.size() < static_cast<std::size_t>(k)) {
    const std::size_t best = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
    out.push_back(model.points[best]);
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = out.size() == 1 ? (model.points[i] - model.points[best]).squaredNorm()
                                : std::min(dist[i], (model.points[i] - model.points[best]).squaredNorm());
    }
  }
  return out;
}

Box2D project_box(const Pose& pose, const ObjectModel& model, const CameraIntrinsics& cam) {
  Box2D b{1e300, 1e300, -1e300, -1e300};
  for (const Vec3& x : model.points) {
    const Vec3 p = pose.rotation * x + pose.translation;
    const double u = cam.fx * p.x() / p.z() + cam.cx;
    const double v = cam.fy * p.y() / p.z() + cam.cy;
    b.x_min = std::min(b.x_min, u);
    b.y_min = std::min(b.y_min, v);
    b.x_max = std::max(b.x_max, u);
    b.y_max = std::max(b.y_max, v);
  }
  return b;
}

ObservationSynth::ObservationSynth(std::uint64_t embedding_seed) {
  using L = ObservationLayout;
  std::mt19937_64 rng(embedding_seed);
  std::normal_distribution<double> w(0.0, 0.9);
  std::normal_distribution<double> b(0.0, 0.5);
  weights_.resize(static_cast<std::size_t>(L::kPoseChannels * 2 * L::kKeypoints));
  for (double& v : weights_) v = w(rng);
  bias_.resize(static_cast<std::size_t>(L::kPoseChannels));
  for (double& v : bias_) v = b(rng);
}

std::vector<double> ObservationSynth::clean(const Pose& pose, const ObjectModel& model,
                                            const CameraIntrinsics& cam) const {
  using L = ObservationLayout;
  const double z = pose.translation.z();
  if (!(z > 0.0)) throw NonPositiveDepth("synthesize: pose depth must be positive");
  std::vector<double> obs(static_cast<std::size_t>(L::kDim), 0.0);
  const double vx = project_vx(pose.translation, cam);
  const double vy = project_vy(pose.translation, cam);
  obs[L::kCenter] = vx / 200.0;
  obs[L::kCenter + 1] = vy / 200.0;
  obs[L::kSize] = -std::log(z);

  const auto keypoints = select_keypoints(model, L::kKeypoints);
  const double scale = cam.fx * model.diameter / z;
  std::vector<double> q(2 * static_cast<std::size_t>(L::kKeypoints));
  const double inv_group = 1.0 / static_cast<double>(model.symmetries.size());
  // Averaging over the symmetry group makes equivalent poses indistinguishable.
  for (const Mat3& s : model.symmetries) {
    const Mat3 r = pose.rotation * s;
    for (std::size_t j = 0; j < keypoints.size(); ++j) {
      const Vec3 p = r * keypoints[j] + pose.translation;
      q[2 * j] = (cam.fx * p.x() / p.z() - vx) / scale;
      q[2 * j + 1] = (cam.fy * p.y() / p.z() - vy) / scale;
    }
    for (std::size_t c = 0; c < static_cast<std::size_t>(L::kPoseChannels); ++c) {
      double a = bias_[c];
      for (std::size_t j = 0; j < q.size(); ++j) a += weights_[c * q.size() + j] * q[j];
      obs[static_cast<std::size_t>(L::kPoseBegin) + c] += std::tanh(a) * inv_group;
    }
  }
  return obs;
}

std::vector<double> ObservationSynth::synthesize(const Pose& pose, const ObjectModel& model,
                                                 const CameraIntrinsics& cam, const DomainConfig& dc,
                                                 std::uint64_t sample_key) const {
  auto obs = clean(pose, model, cam);
  dc.validate(obs.size());
  std::mt19937_64 rng(mix_seed(dc.seed, sample_key));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double depth_n = noise(rng);
  obs[ObservationLayout::kSize] += dc.depth_noise * pose.translation.z() * depth_n;
  const double scale = 1.0 + dc.offset_spread * (2.0 * unit(rng) - 1.0);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (!dc.offset.empty()) obs[i] += scale * dc.offset[i];
    // Draw both variates unconditionally so the stream does not depend on the config.
    const double n = noise(rng);
    const double u = unit(rng);
    obs[i] += dc.noise * n;
    if (u < dc.dropout) obs[i] = 0.0;
  }
  return obs;
}

namespace {
std::atomic<int> g_training_scopes{0};
}

TrainingAuditScope::TrainingAuditScope() { ++g_training_scopes; }
TrainingAuditScope::~TrainingAuditScope() { --g_training_scopes; }
bool TrainingAuditScope::active() { return g_training_scopes.load() > 0; }

Sample::Sample(std::string id_, Domain d, std::string obj, std::vector<double> obs, Box2D b, Pose gt,
               bool eval_only)
    : id(std::move(id_)),
      domain(d),
      object_id(std::move(obj)),
      observation(std::move(obs)),
      box(b),
      gt_(std::move(gt)),
      eval_only_(eval_only) {}

const Pose& Sample::gt_pose() const {
  if (eval_only_ && TrainingAuditScope::active()) {
    throw AuditViolation("evaluation-only ground truth of " + id + " read during training");
  }
  return gt_;
}

double ScalarSample::label() const {
  if (eval_only && TrainingAuditScope::active()) {
    throw AuditViolation("evaluation-only label of " + id + " read during training");
  }
  return target;
}

const NamedObject& Dataset::object(const std::string& id) const {
  for (const auto& o : objects) {
    if (o.id == id) return o;
  }
  throw InvalidArgument("dataset: unknown object " + id);
}

std::vector<const Sample*> Dataset::split(Domain d) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples) {
    if (s.domain == d) out.push_back(&s);
  }
  return out;
}

std::vector<const Sample*> Dataset::split(Domain d, const std::string& object_id) const {
  std::vector<const Sample*> out;
  for (const auto& s : samples) {
    if (s.domain == d && s.object_id == object_id) out.push_back(&s);
  }
  return out;
}

Pose sample_pose(std::uint64_t key, const PoseRange& range, const CameraIntrinsics& cam) {
  std::mt19937_64 rng(key);
  Pose p;
  p.rotation = random_rotation(rng);
  std::uniform_real_distribution<double> v(range.v_min, range.v_max);
  std::uniform_real_distribution<double> z(range.z_min, range.z_max);
  const double vx = v(rng);
  const double vy = v(rng);
  p.translation = translation_from_image(vx, vy, z(rng), cam);
  return p;
}

Dataset make_dataset(int n_source, int n_target, std::vector<NamedObject> objects, const CameraIntrinsics& cam,
                     const DomainConfig& source_cfg, const DomainConfig& target_cfg, std::uint64_t seed,
                     const PoseRange& range, std::uint64_t embedding_seed) {
  if (n_source < 1 || n_target < 1) throw InvalidArgument("make_dataset: counts must be >= 1");
  if (objects.empty()) throw InvalidArgument("make_dataset: no objects");
  cam.validate();
  Dataset ds;
  ds.camera = cam;
  ds.range = range;
  ds.seed = seed;
  ds.embedding_seed = embedding_seed;
  ds.source_cfg = source_cfg;
  ds.target_cfg = target_cfg;
  ds.objects = std::move(objects);
  const ObservationSynth synth(embedding_seed);
  const std::size_t total = static_cast<std::size_t>(n_source) + static_cast<std::size_t>(n_target);
  ds.samples.resize(total);
  const long n = static_cast<long>(total);
  detail::parallel_for(n, [&](long li) {
    const auto i = static_cast<std::size_t>(li);
    const bool src = i < static_cast<std::size_t>(n_source);
    const std::size_t local = src ? i : i - static_cast<std::size_t>(n_source);
    const Domain d = src ? Domain::Source : Domain::Target;
    const std::uint64_t key = mix_seed(mix_seed(seed, src ? 1 : 2), local);
    const auto& obj = ds.objects[local % ds.objects.size()];
    const Pose pose = sample_pose(key, range, cam);
    auto obs = synth.synthesize(pose, obj.model, cam, src ? source_cfg : target_cfg, key);
    ds.samples[i] = Sample(fmt::format("{}-{:06d}", src ? "src" : "tgt", local), d, obj.id, std::move(obs),
                           project_box(pose, obj.model, cam), pose, !src);
  });
  return ds;
}

std::vector<const ScalarSample*> ScalarDataset::split(Domain d) const {
  std::vector<const ScalarSample*> out;
  for (const auto& s : samples) {
    if (s.domain == d) out.push_back(&s);
  }
  return out;
}

namespace {

// Eight outline points of a square, an ellipse and a heart-like shape.
std::array<double, 16> shape_outline(int type) {
  std::array<double, 16> out{};
  for (int j = 0; j < 8; ++j) {
    const double t = 2.0 * std::numbers::pi * j / 8.0;
    double x = std::cos(t), y = std::sin(t);
    if (type == 0) {
      const double m = std::max(std::abs(x), std::abs(y));
      x /= m;
      y /= m;
    } else if (type == 1) {
      y *= 0.55;
    } else {
      const double r = 0.6 + 0.4 * std::abs(std::sin(t));
      x *= r;
      y = y * r - 0.2 * std::cos(2.0 * t);
    }
    out[2 * static_cast<std::size_t>(j)] = 0.5 * x;
    out[2 * static_cast<std::size_t>(j) + 1] = 0.5 * y;
  }
  return out;
}

}  // namespace

ScalarDataset make_scalar_task(int n_source, int n_target, const ScalarShiftConfig& shift, std::uint64_t seed) {
  if (n_source < 1 || n_target < 1) throw InvalidArgument("make_scalar_task: counts must be >= 1");
  using L = ObservationLayout;
  constexpr std::size_t kShapeChannels = L::kDim - L::kNuisanceChannels;
  std::mt19937_64 erng(shift.embedding_seed);
  std::normal_distribution<double> wdist(0.0, 0.9);
  std::normal_distribution<double> bdist(0.0, 0.5);
  std::vector<double> w(kShapeChannels * 16), b(kShapeChannels);
  for (double& v : w) v = wdist(erng);
  for (double& v : b) v = bdist(erng);

  ScalarDataset ds;
  ds.seed = seed;
  ds.shift = shift;
  const std::size_t total = static_cast<std::size_t>(n_source) + static_cast<std::size_t>(n_target);
  ds.samples.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    const bool src = i < static_cast<std::size_t>(n_source);
    const std::size_t local = src ? i : i - static_cast<std::size_t>(n_source);
    const std::uint64_t key = mix_seed(mix_seed(seed, src ? 3 : 4), local);
    std::mt19937_64 rng(key);
    std::uniform_real_distribution<double> scale_d(kScalarMin, kScalarMax);
    std::uniform_real_distribution<double> angle_d(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> pos_d(-0.5, 0.5);
    std::uniform_int_distribution<int> type_d(0, 2);
    const double s = scale_d(rng);
    const double th = angle_d(rng);
    const double px = pos_d(rng), py = pos_d(rng);
    const auto outline = shape_outline(type_d(rng));
    std::array<double, 16> q{};
    for (std::size_t j = 0; j < 8; ++j) {
      const double x = outline[2 * j], y = outline[2 * j + 1];
      q[2 * j] = px + s * (std::cos(th) * x - std::sin(th) * y);
      q[2 * j + 1] = py + s * (std::sin(th) * x + std::cos(th) * y);
    }
    std::vector<double> obs(static_cast<std::size_t>(L::kDim), 0.0);
    for (std::size_t c = 0; c < kShapeChannels; ++c) {
      if (c < 16) {
        obs[c] = q[c];
        continue;
      }
      double a = b[c];
      for (std::size_t j = 0; j < 16; ++j) a += w[c * 16 + j] * q[j];
      obs[c] = std::tanh(a);
    }
    const DomainConfig& dc = src ? shift.source : shift.target;
    dc.validate(obs.size());
    std::mt19937_64 nrng(mix_seed(dc.seed, key));
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t c = 0; c < obs.size(); ++c) {
      if (!dc.offset.empty()) obs[c] += dc.offset[c];
      const double nv = noise(nrng);
      const double u = unit(nrng);
      obs[c] += dc.noise * nv;
      if (u < dc.dropout) obs[c] = 0.0;
    }
    ds.samples[i] = {fmt::format("{}-{:06d}", src ? "src" : "tgt", local), src ? Domain::Source : Domain::Target,
                     std::move(obs), s, !src};
  }
  return ds;
}

}  // namespace mast
