#include "mast/labeling.hpp"

#include "mast/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

namespace mast {

void ScoreAssignmentConfig::validate() const {
  if (k < 1) throw InvalidArgument("score assignment: k must be >= 1");
  if (k == 1) {
    if (std::abs(theta1 - 1.0) > 1e-9) throw InvalidArgument("score assignment: k = 1 requires theta1 = 1");
    return;
  }
  if (!(theta1 > theta2) || !(theta2 > 0.0)) {
    throw InvalidArgument("score assignment: requires theta1 > theta2 > 0");
  }
  if (std::abs(theta1 + (k - 1) * theta2 - 1.0) > 1e-9) {
    throw InvalidArgument("score assignment: theta1 + (k - 1) theta2 must equal 1");
  }
}

namespace {

template <typename DistFn>
std::vector<int> k_smallest(std::size_t n, int k, DistFn dist) {
  if (k < 0 || static_cast<std::size_t>(k) > n) {
    throw InvalidArgument("nearest_anchors: k exceeds the anchor count");
  }
  std::vector<std::pair<double, int>> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = {dist(i), static_cast<int>(i)};
  // Lexicographic pair ordering breaks distance ties by lower index.
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  std::vector<int> out(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(i)].second;
  return out;
}

}  // namespace

std::vector<int> nearest_anchors(const RotationMatrix& target, std::span<const RotationMatrix> anchors, int k) {
  return k_smallest(anchors.size(), k, [&](std::size_t i) { return geodesic_distance(target, anchors[i]); });
}

std::vector<int> nearest_anchors(double target, std::span<const double> anchors, int k) {
  return k_smallest(anchors.size(), k, [&](std::size_t i) { return std::abs(target - anchors[i]); });
}

std::vector<double> sparse_scores(std::span<const int> neighbors, std::size_t n,
                                  const ScoreAssignmentConfig& cfg) {
  std::vector<double> s(n, 0.0);
  for (std::size_t r = 0; r < neighbors.size(); ++r) {
    s[static_cast<std::size_t>(neighbors[r])] = r == 0 ? cfg.theta1 : cfg.theta2;
  }
  return s;
}

LabelScores assign_scores(const LabelTarget& gt, const AnchorSet& anchors, const LabelConfig& cfg) {
  cfg.rotation.validate();
  cfg.vx.validate();
  cfg.vy.validate();
  cfg.z.validate();
  LabelScores out;
  const auto nr = nearest_anchors(gt.pose.rotation, anchors.rotations, cfg.rotation.k);
  out.s_rotation = sparse_scores(nr, anchors.rotations.size(), cfg.rotation);
  const auto nx = nearest_anchors(gt.vx, anchors.bins_vx, cfg.vx.k);
  out.s_vx = sparse_scores(nx, anchors.bins_vx.size(), cfg.vx);
  const auto ny = nearest_anchors(gt.vy, anchors.bins_vy, cfg.vy.k);
  out.s_vy = sparse_scores(ny, anchors.bins_vy.size(), cfg.vy);
  const auto nz = nearest_anchors(gt.pose.translation.z(), anchors.bins_z, cfg.z.k);
  out.s_z = sparse_scores(nz, anchors.bins_z.size(), cfg.z);
  return out;
}

}  // namespace mast
