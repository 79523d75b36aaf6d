#pragma once

#include "mast/geometry.hpp"
#include "mast/tinynet.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mast {

// One target of the coarse-to-fine head: a classifier over `anchors` classes and a
// regressor emitting `width` residual values per anchor. Raw regressor outputs are
// mapped to residual units as raw * residual_scale[c] + residual_offset[c].
struct BranchSpec {
  std::string name;
  int anchors = 1;
  int width = 1;
  std::vector<double> residual_scale;
  std::vector<double> residual_offset;
};

struct NetworkConfig {
  int input_dim = 64;
  int feature_dim = 128;  // C
  int encoder_layers = 2;
  int head_hidden = 64;
  // Disabled for direct regression: every branch must then have a single anchor.
  bool classifier = true;
  // Zero final layers give uniform class probabilities and zero residuals at start.
  bool zero_init_heads = true;
  std::uint64_t seed = 1;
  std::vector<BranchSpec> branches;

  void validate() const;
};

// Branch layout for pose estimation over the given anchors: R, v_x, v_y, z.
// Translation residuals are expressed in units of their bin width and the
// rotation residual is offset so that a zero output is the identity.
std::vector<BranchSpec> pose_branches(const AnchorSet& anchors);
// Single-scalar layout used by the scalar regression task.
std::vector<BranchSpec> scalar_branches(std::span<const double> bins);

enum PoseBranch : std::size_t { kRotation = 0, kVx = 1, kVy = 2, kZ = 3 };

struct HeadOutput {
  std::vector<std::vector<double>> probs;      // per branch, length anchors
  std::vector<std::vector<double>> residuals;  // per branch, length anchors * width
  std::vector<double> feature;                 // shared feature f

  // Index of the largest probability; ties go to the lower index.
  int argmax(std::size_t branch) const;
  double max_prob(std::size_t branch) const;
  Rotation6D rotation_residual(int anchor) const;
  AnchorPicks pose_picks() const;
  PickedResiduals pose_residuals(const AnchorPicks& picks) const;
};

struct ForwardVars {
  nn::Var feature;
  std::vector<nn::Var> probs;  // invalid when the classifier is disabled
  std::vector<nn::Var> residuals;
};

struct Linear {
  nn::Parameter weight;  // in x out
  nn::Parameter bias;    // 1 x out
};

class PoseNetwork {
 public:
  PoseNetwork() = default;
  explicit PoseNetwork(NetworkConfig cfg);

  const NetworkConfig& config() const { return cfg_; }

  // obs is B x input_dim; throws ShapeError on a dimension mismatch.
  ForwardVars forward(nn::Graph& g, const nn::Tensor& obs);
  static std::vector<HeadOutput> extract(const nn::Graph& g, const ForwardVars& vars,
                                         const NetworkConfig& cfg);
  // Inference convenience over a batch of observations; parameters are untouched.
  std::vector<HeadOutput> infer(const nn::Tensor& obs) const;

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  void zero_grad();

 private:
  static nn::Var apply(nn::Graph& g, nn::Var x, Linear& layer);

  NetworkConfig cfg_;
  std::vector<Linear> encoder_;
  std::vector<Linear> cls_hidden_, cls_out_;
  std::vector<Linear> reg_hidden_, reg_out_;
};

// Stacks observation rows into a B x dim tensor.
nn::Tensor stack_rows(std::span<const std::vector<double>* const> rows);

}  // namespace mast
