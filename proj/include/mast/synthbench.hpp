#pragma once

// Procedural Sim2Real benchmark. Observations are low-dimensional stand-ins for
// rendered crops: a fixed smooth embedding of the projected object keypoints
// and apparent size. The source ("synthetic") and target ("real") domains share
// the pose law and differ only in the observation channel.

#include "mast/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mast {

enum class ObjectKind { UnitBox, Box, Cylinder, Blob };

ObjectKind parse_object_kind(const std::string& s);
std::string to_string(ObjectKind k);

// Deterministic point cloud of the given family. Boxes carry their rotation
// group, cylinders their 2-fold axis symmetry, blobs only the identity.
ObjectModel make_object(ObjectKind kind, std::uint64_t seed, int n_points);

enum class Domain { Source, Target };
std::string to_string(Domain d);
Domain parse_domain(const std::string& s);

struct DomainConfig {
  std::vector<double> offset;  // added to every observation; empty means zero
  double noise = 0.0;          // standard deviation of additive Gaussian noise
  double dropout = 0.0;        // probability of zeroing each coordinate
  // Extra noise on the apparent-size channel with standard deviation depth_noise * z:
  // size measurements get less precise as objects recede.
  double depth_noise = 0.0;
  // Per-sample offset scale drawn uniformly from [1 - offset_spread, 1 + offset_spread].
  double offset_spread = 0.0;
  std::uint64_t seed = 0;

  void validate(std::size_t dim) const;
};

// Observation layout.
struct ObservationLayout {
  static constexpr int kCenter = 0;      // v_x / 200, v_y / 200
  static constexpr int kSize = 2;        // log apparent size relative to depth 1 m
  static constexpr int kPoseBegin = 3;   // smooth keypoint embedding
  static constexpr int kPoseChannels = 45;
  static constexpr int kNuisanceBegin = kPoseBegin + kPoseChannels;
  static constexpr int kNuisanceChannels = 16;
  static constexpr int kDim = kNuisanceBegin + kNuisanceChannels;  // 64
  static constexpr int kKeypoints = 8;
};

// Offset vector with entries of the given magnitude and seeded signs on channels
// [begin, begin + count) and zero elsewhere.
std::vector<double> make_domain_offset(double magnitude, int begin, int count, std::uint64_t seed,
                                       int dim = ObservationLayout::kDim);

class ObservationSynth {
 public:
  explicit ObservationSynth(std::uint64_t embedding_seed = 7);

  // Deterministic for fixed (pose, model, camera, domain config, sample key).
  std::vector<double> synthesize(const Pose& pose, const ObjectModel& model, const CameraIntrinsics& cam,
                                 const DomainConfig& dc, std::uint64_t sample_key) const;
  // Noise-free, offset-free observation.
  std::vector<double> clean(const Pose& pose, const ObjectModel& model, const CameraIntrinsics& cam) const;

 private:
  std::vector<double> weights_;  // kPoseChannels x (2 * kKeypoints)
  std::vector<double> bias_;
};

// Farthest-point keypoints, starting from the point farthest from the centroid.
std::vector<Vec3> select_keypoints(const ObjectModel& model, int k);

// Tight box around the projected model points, in absolute pixel coordinates.
Box2D project_box(const Pose& pose, const ObjectModel& model, const CameraIntrinsics& cam);

class Sample {
 public:
  std::string id;
  Domain domain = Domain::Source;
  std::string object_id;
  std::vector<double> observation;
  Box2D box;

  Sample() = default;
  Sample(std::string id_, Domain d, std::string obj, std::vector<double> obs, Box2D b, Pose gt, bool eval_only);

  // Throws AuditViolation when the pose is evaluation-only and a training scope is open.
  const Pose& gt_pose() const;
  bool eval_only() const { return eval_only_; }

 private:
  Pose gt_;
  bool eval_only_ = false;
};

// While alive, reading evaluation-only ground truth raises AuditViolation.
class TrainingAuditScope {
 public:
  TrainingAuditScope();
  ~TrainingAuditScope();
  TrainingAuditScope(const TrainingAuditScope&) = delete;
  TrainingAuditScope& operator=(const TrainingAuditScope&) = delete;
  static bool active();
};

struct PoseRange {
  double v_min = -150.0, v_max = 150.0;  // pixels
  double z_min = 0.6, z_max = 1.4;       // meters
};

struct NamedObject {
  std::string id;
  ObjectKind kind = ObjectKind::Blob;
  std::uint64_t seed = 0;
  ObjectModel model;
};

struct Dataset {
  CameraIntrinsics camera;
  PoseRange range;
  std::uint64_t seed = 0;
  std::uint64_t embedding_seed = 7;
  DomainConfig source_cfg;
  DomainConfig target_cfg;
  std::vector<NamedObject> objects;
  std::vector<Sample> samples;

  const NamedObject& object(const std::string& id) const;
  std::vector<const Sample*> split(Domain d) const;
  std::vector<const Sample*> split(Domain d, const std::string& object_id) const;
};

Pose sample_pose(std::uint64_t key, const PoseRange& range, const CameraIntrinsics& cam);

// Objects are assigned round-robin by sample index; target poses are flagged evaluation-only.
Dataset make_dataset(int n_source, int n_target, std::vector<NamedObject> objects, const CameraIntrinsics& cam,
                     const DomainConfig& source_cfg, const DomainConfig& target_cfg, std::uint64_t seed,
                     const PoseRange& range = {}, std::uint64_t embedding_seed = 7);

// Scalar regression task: recover the scale of a 2D shape under nuisance position,
// orientation and shape type. The first 16 channels hold the outline coordinates,
// the rest a fixed tanh embedding of them. Depth noise and offset spread of the
// domain configs are not used here.
struct ScalarSample {
  std::string id;
  Domain domain = Domain::Source;
  std::vector<double> observation;
  double target = 0.0;
  bool eval_only = false;

  double label() const;  // audited like Sample::gt_pose
};

struct ScalarShiftConfig {
  DomainConfig source;
  DomainConfig target;
  std::uint64_t embedding_seed = 11;
};

struct ScalarDataset {
  std::uint64_t seed = 0;
  ScalarShiftConfig shift;
  std::vector<ScalarSample> samples;

  std::vector<const ScalarSample*> split(Domain d) const;
};

inline constexpr double kScalarMin = 0.5;
inline constexpr double kScalarMax = 1.0;

ScalarDataset make_scalar_task(int n_source, int n_target, const ScalarShiftConfig& shift, std::uint64_t seed);

// Deterministic 64-bit mixing used to derive per-sample seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace mast
