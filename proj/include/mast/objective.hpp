#pragma once

#include "mast/geometry.hpp"
#include "mast/labeling.hpp"
#include "mast/network.hpp"
#include "mast/tinynet.hpp"

#include <span>
#include <vector>

namespace mast {

// Batch feature similarity graph G (B x B, row-major).
struct CorrelationGraph {
  std::size_t size = 0;
  std::vector<double> g;

  double operator()(std::size_t i, std::size_t j) const { return g[i * size + j]; }
};

// Precomputed class correlation graph over N depth (or scalar) bins.
struct TargetGraph {
  std::size_t size = 0;
  std::vector<double> g0;
  std::vector<double> angles;

  double operator()(std::size_t i, std::size_t j) const { return g0[i * size + j]; }
};

struct ObjectiveConfig {
  LabelConfig labels;
  // Neighborhood sizes of the anchor-wise regression loss.
  int k_rotation = 4;
  int k_z = 7;
  int k_vxvy = 7;
  bool use_classification = true;
  bool use_ctc = true;
  double ctc_weight = 1.0;

  void validate() const;
};

struct ObjectiveTerms {
  double cls = 0.0;    // batch mean
  double reg = 0.0;    // batch mean
  double ctc = 0.0;    // unweighted
  double total = 0.0;
};

// -sum_i labels_i log(probs_i + 1e-12).
double soft_cross_entropy(std::span<const double> probs, std::span<const double> labels);

// (1 / |O|) sum_x |T x - T~ x|_1.
double point_matching_distance(const Pose& p, const Pose& gt, const ObjectModel& model);

// Gradient of point_matching_distance with respect to the rotation of `p`
// (translation of p held equal to gt's).
Mat3 point_matching_rotation_grad(const Mat3& r, const Mat3& r_gt, const ObjectModel& model);

// Backward through rot6d_to_matrix: maps dL/dM to dL/d(a1, a2).
std::array<double, 6> rot6d_backward(const Rotation6D& r, const Mat3& grad_m);

// Ground truth for one sample with the rotation already resolved against symmetries.
struct RegressionTarget {
  LabelTarget gt;
};

// Per-sample anchor-wise regression loss. When `grad` is non-null it receives
// d(loss)/d(residuals), shaped like out.residuals.
double regression_loss(const HeadOutput& out, const RegressionTarget& target, const AnchorSet& anchors,
                       const ObjectModel& model, const CameraIntrinsics& cam, int k_rotation, int k_z,
                       int k_vxvy, std::vector<std::vector<double>>* grad = nullptr);

// Rotation predicted by the head (argmax anchor composed with its residual).
RotationMatrix predicted_rotation(const HeadOutput& out, const AnchorSet& anchors);

// Replaces the ground-truth rotation by its symmetric equivalent closest to the prediction.
LabelTarget resolve_symmetry(const LabelTarget& gt, const HeadOutput& out, const AnchorSet& anchors,
                             const ObjectModel& model);

// Scalar task: sum over the k nearest bins of |bin_i + residual_i - target|.
double scalar_regression_loss(const HeadOutput& out, double target, std::span<const double> bins, int k,
                              std::vector<std::vector<double>>* grad = nullptr);

CorrelationGraph batch_feature_graph(std::span<const std::vector<double>> features);
TargetGraph build_target_graph(std::span<const double> bins, double z_min, double z_max);
// |G - G~|^2 summed over all B^2 entries, with G~(i, j) = g0(n_i, n_j).
double ctc_loss(const CorrelationGraph& g, std::span<const int> classes, const TargetGraph& tg);

// Class index used by the correlation regularizer: nearest bin.
int ctc_class(double value, std::span<const double> bins);

// Graph ops. All return 1 x 1 nodes that sum over the batch.
namespace ops {
nn::Var cosine_graph(nn::Graph& g, nn::Var features);
nn::Var ctc(nn::Graph& g, nn::Var graph, std::vector<int> classes, const TargetGraph& tg);
nn::Var cross_entropy(nn::Graph& g, nn::Var probs, nn::Tensor labels);
nn::Var pose_regression(nn::Graph& g, std::span<const nn::Var> residuals, std::span<const HeadOutput> outs,
                        std::span<const RegressionTarget> targets, const AnchorSet& anchors,
                        const ObjectModel& model, const CameraIntrinsics& cam, const ObjectiveConfig& cfg);
// Mixed-object batch: models[i] belongs to sample i.
nn::Var pose_regression(nn::Graph& g, std::span<const nn::Var> residuals, std::span<const HeadOutput> outs,
                        std::span<const RegressionTarget> targets, const AnchorSet& anchors,
                        std::span<const ObjectModel* const> models, const CameraIntrinsics& cam,
                        const ObjectiveConfig& cfg);
nn::Var scalar_regression(nn::Graph& g, nn::Var residuals, std::span<const HeadOutput> outs,
                          std::span<const double> targets, std::span<const double> bins, int k);
}  // namespace ops

// L = mean_b (L_cls + L_reg) + w L_ctc over a pose batch.
nn::Var total_objective(nn::Graph& g, const ForwardVars& vars, std::span<const LabelTarget> targets,
                        const AnchorSet& anchors, const ObjectModel& model, const CameraIntrinsics& cam,
                        const ObjectiveConfig& cfg, const NetworkConfig& net, const TargetGraph& tg,
                        ObjectiveTerms* terms = nullptr);
// Mixed-object batch: models[i] belongs to sample i.
nn::Var total_objective(nn::Graph& g, const ForwardVars& vars, std::span<const LabelTarget> targets,
                        const AnchorSet& anchors, std::span<const ObjectModel* const> models,
                        const CameraIntrinsics& cam, const ObjectiveConfig& cfg, const NetworkConfig& net,
                        const TargetGraph& tg, ObjectiveTerms* terms = nullptr);

struct ScalarObjectiveConfig {
  ScoreAssignmentConfig labels{0.55, 0.075, 7};
  int k = 7;
  bool use_classification = true;
  bool use_ctc = true;
  double ctc_weight = 1.0;
};

nn::Var total_scalar_objective(nn::Graph& g, const ForwardVars& vars, std::span<const double> targets,
                               std::span<const double> bins, const ScalarObjectiveConfig& cfg,
                               const NetworkConfig& net, const TargetGraph& tg, ObjectiveTerms* terms = nullptr);

}  // namespace mast
