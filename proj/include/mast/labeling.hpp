#pragma once

#include "mast/geometry.hpp"

#include <span>
#include <vector>

namespace mast {

struct ScoreAssignmentConfig {
  double theta1 = 1.0;
  double theta2 = 0.0;
  int k = 1;

  // theta1 > theta2 > 0 and theta1 + (k - 1) theta2 = 1; k = 1 allows theta2 = 0.
  void validate() const;
};

struct LabelConfig {
  ScoreAssignmentConfig rotation{0.7, 0.1, 4};
  ScoreAssignmentConfig vx{0.55, 0.075, 7};
  ScoreAssignmentConfig vy{0.55, 0.075, 7};
  ScoreAssignmentConfig z{0.55, 0.075, 7};
};

struct LabelScores {
  std::vector<double> s_rotation;
  std::vector<double> s_vx;
  std::vector<double> s_vy;
  std::vector<double> s_z;
};

// Ground truth as seen by the labeler: the pose plus its image-plane offsets.
struct LabelTarget {
  Pose pose;
  double vx = 0.0;
  double vy = 0.0;

  static LabelTarget from_pose(const Pose& p, const CameraIntrinsics& cam) {
    return {p, project_vx(p.translation, cam), project_vy(p.translation, cam)};
  }
};

// k nearest anchors in ascending distance; ties go to the lower index.
std::vector<int> nearest_anchors(const RotationMatrix& target, std::span<const RotationMatrix> anchors, int k);
std::vector<int> nearest_anchors(double target, std::span<const double> anchors, int k);

// Sparse score vector of length n given the ordered neighbor list.
std::vector<double> sparse_scores(std::span<const int> neighbors, std::size_t n,
                                  const ScoreAssignmentConfig& cfg);

LabelScores assign_scores(const LabelTarget& gt, const AnchorSet& anchors, const LabelConfig& cfg);

}  // namespace mast
