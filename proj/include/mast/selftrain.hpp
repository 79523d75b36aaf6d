#pragma once

// Teacher training on labeled source data, confidence-gated pseudo-labeling of
// the target domain and student rounds with a decreasing threshold.

#include "mast/evaluate.hpp"
#include "mast/network.hpp"
#include "mast/objective.hpp"
#include "mast/synthbench.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mast {

// Parameters from which an AnchorSet is regenerated.
struct AnchorSpec {
  int n_rot = 60;
  int n_vx = 20;
  int n_vy = 20;
  int n_z = 40;
  double v_min = -200.0, v_max = 200.0;
  double z_min = 0.0, z_max = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
  AnchorSet build() const;
};

// Per-object network together with its optimizer state.
struct ObjectNet {
  std::string object_id;
  PoseNetwork net;
  nn::Adam adam;
};

// One network per object, sharing the anchor layout and objective.
struct PoseEstimator {
  AnchorSpec anchor_spec;
  AnchorSet anchors;
  NetworkConfig net;  // branches are derived from the anchors
  ObjectiveConfig objective;
  CameraIntrinsics camera;
  TargetGraph target_graph;
  std::vector<ObjectNet> members;

  static PoseEstimator create(const AnchorSpec& anchors, NetworkConfig net, const ObjectiveConfig& objective,
                              const CameraIntrinsics& cam, const std::vector<std::string>& object_ids);

  ObjectNet& member(const std::string& object_id);
  const ObjectNet& member(const std::string& object_id) const;
};

// Settings of the classification-free baseline: one anchor per target, k = 1, no L_ctc.
AnchorSpec direct_regression_anchors(const AnchorSpec& base);
ObjectiveConfig direct_regression_objective(const ObjectiveConfig& base);

// Pose assembled from the argmax anchors and their residuals. A degenerate
// residual falls back to its anchor so that inference never fails.
Pose predict_pose(const HeadOutput& out, const AnchorSet& anchors, const CameraIntrinsics& cam);

struct SelfTrainConfig {
  double tau_start = 0.5;
  double tau_end = 0.1;
  int rounds = 5;
  int pretrain_epochs = 0;  // shared network over all objects before per-object fine-tuning
  int teacher_epochs = 30;
  int student_epochs = 4;  // per round
  double teacher_lr = 3e-4;
  double student_lr = 3e-5;
  int batch_size = 32;
  bool reannotate = true;  // later rounds are annotated by the latest student
  bool cosine_lr = true;   // cosine decay from the initial rate over each stage
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  std::string object_id;
  int epoch = 0;
  double loss = 0.0;
  double ctc = 0.0;
};

// Minimizes the total objective over the labeled source samples. Leaves the
// estimator at its last finite state and throws TrainingFailure on divergence.
std::vector<EpochLog> train_teacher(PoseEstimator& est, std::span<const Sample* const> source,
                                    const Dataset& ds, const SelfTrainConfig& cfg);

struct PseudoLabel {
  std::string sample_id;
  std::string object_id;
  Pose pose;
  double confidence = 0.0;              // max of S_z
  std::array<double, 4> branch_max{};   // max of S_R, S_vx, S_vy, S_z
  std::vector<double> s_z;
};

std::vector<PseudoLabel> pseudo_label(const PoseEstimator& est, std::span<const Sample* const> target);

// Labels with confidence strictly above tau, in input order.
std::vector<PseudoLabel> select_samples(std::span<const PseudoLabel> labels, double tau);

// Linear from tau_start at round 0 to tau_end at the final round.
double threshold_schedule(int round, const SelfTrainConfig& cfg);

struct StudentRound {
  RoundStats stats;                      // selected_recall is filled by evaluation
  std::vector<PseudoLabel> annotations;  // all pseudo labels of the round
  std::vector<PseudoLabel> selected;
};

struct StudentResult {
  PoseEstimator student;
  std::vector<StudentRound> rounds;
};

// Initializes the student from the teacher and runs the configured rounds. On
// TrainingFailure the last finite student is copied into `failed` when given.
StudentResult train_student(const PoseEstimator& teacher, std::span<const Sample* const> source,
                            std::span<const Sample* const> target, const Dataset& ds, const SelfTrainConfig& cfg,
                            PoseEstimator* failed = nullptr);

// Evaluation passes. They read evaluation-only ground truth and must run
// outside any training scope.
std::vector<EvalRecord> evaluate_estimator(const PoseEstimator& est, std::span<const Sample* const> samples,
                                           const Dataset& ds);
// Recall of the pseudo poses against ground truth; absent for an empty list.
std::optional<double> pseudo_label_recall(std::span<const PseudoLabel> labels, const Dataset& ds);
void fill_selected_recall(std::vector<StudentRound>& rounds, const Dataset& ds);

// Recall among the samples whose confidence from the given branch exceeds each tau.
// Points with fewer than min_selected samples are dropped.
SweepCurve threshold_sweep(std::span<const PseudoLabel> labels, const Dataset& ds, std::size_t branch,
                           std::span<const double> taus, std::size_t min_selected = 10);
std::vector<double> default_sweep_grid();
std::string branch_name(std::size_t branch);

// Scalar regression task.
struct ScalarEstimator {
  std::vector<double> bins;
  double lo = kScalarMin;
  double hi = kScalarMax;
  NetworkConfig net;
  ScalarObjectiveConfig objective;
  TargetGraph target_graph;
  PoseNetwork network;
  nn::Adam adam;

  // direct = true builds the single-bin regression baseline.
  static ScalarEstimator create(int n_bins, bool direct, bool use_ctc, NetworkConfig net);
  std::vector<HeadOutput> infer(std::span<const ScalarSample* const> samples) const;
  double predict(const HeadOutput& out) const;
};

std::vector<EpochLog> train_scalar(ScalarEstimator& est, std::span<const ScalarSample* const> samples,
                                   std::span<const double> targets, int epochs, double lr, int batch_size,
                                   std::uint64_t seed, bool cosine = true);
// Epochs [offset, offset + epochs) of a cosine schedule spanning `total` epochs.
std::vector<EpochLog> train_scalar(ScalarEstimator& est, std::span<const ScalarSample* const> samples,
                                   std::span<const double> targets, int epochs, double lr, int batch_size,
                                   std::uint64_t seed, bool cosine, int offset, int total);
// Confidence-gated rounds on the target domain starting from a trained estimator.
std::vector<RoundStats> self_train_scalar(ScalarEstimator& est, std::span<const ScalarSample* const> source,
                                          std::span<const ScalarSample* const> target, const SelfTrainConfig& cfg);
double scalar_mae(const ScalarEstimator& est, std::span<const ScalarSample* const> samples);

}  // namespace mast
