// Randomized invariants that cut across modules.

#include "mast/evaluate.hpp"
#include "mast/kernels.hpp"
#include "mast/labeling.hpp"
#include "mast/objective.hpp"
#include "mast/selftrain.hpp"
#include "mast/synthbench.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>
#include <random>

using namespace mast;

namespace {

const AnchorSet& desk_anchors() {
  static const AnchorSet a = AnchorSpec{}.build();
  return a;
}

Pose random_pose_in(std::mt19937_64& rng, const AnchorSet& a, const CameraIntrinsics& cam) {
  std::uniform_real_distribution<double> v(a.vx_min, a.vx_max), z(a.z_min + 0.05, a.z_max);
  return {random_rotation(rng), translation_from_image(v(rng), v(rng), z(rng), cam)};
}

}  // namespace

// Any pose in range is reachable: nearest anchors plus exact residuals reproduce it.
TEST(Properties, AnchorPlusResidualReconstructsPose) {
  std::mt19937_64 rng(1);
  const AnchorSet& a = desk_anchors();
  const CameraIntrinsics cam;
  for (int t = 0; t < 500; ++t) {
    const Pose gt = random_pose_in(rng, a, cam);
    const LabelTarget lt = LabelTarget::from_pose(gt, cam);
    AnchorPicks picks;
    picks.rotation = nearest_anchors(gt.rotation, a.rotations, 1)[0];
    picks.vx = nearest_anchors(lt.vx, a.bins_vx, 1)[0];
    picks.vy = nearest_anchors(lt.vy, a.bins_vy, 1)[0];
    picks.z = nearest_anchors(gt.translation.z(), a.bins_z, 1)[0];
    PickedResiduals res;
    res.rotation = matrix_to_rot6d(gt.rotation * a.rotations[static_cast<std::size_t>(picks.rotation)].transpose());
    res.vx = lt.vx - a.bins_vx[static_cast<std::size_t>(picks.vx)];
    res.vy = lt.vy - a.bins_vy[static_cast<std::size_t>(picks.vy)];
    res.z = gt.translation.z() - a.bins_z[static_cast<std::size_t>(picks.z)];
    const Pose p = compose_pose(picks, res, a, cam);
    EXPECT_LT(geodesic_distance(p.rotation, gt.rotation), 1e-7);
    EXPECT_LT((p.translation - gt.translation).norm(), 1e-12);
    // Residuals stay within half a bin on the translation axes.
    EXPECT_LE(std::abs(res.vx), 0.5 * a.vx_spacing() + 1e-9);
    EXPECT_LE(std::abs(res.z), 0.5 * a.z_spacing() + 1e-12);
  }
}

TEST(Properties, GeodesicIsBiInvariantMetric) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 1000; ++t) {
    const Mat3 a = random_rotation(rng), b = random_rotation(rng), c = random_rotation(rng), q = random_rotation(rng);
    const double ab = geodesic_distance(a, b);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, std::numbers::pi + 1e-12);
    EXPECT_NEAR(geodesic_distance(q * a, q * b), ab, 1e-7);
    EXPECT_NEAR(geodesic_distance(a * q, b * q), ab, 1e-7);
    EXPECT_LE(ab, geodesic_distance(a, c) + geodesic_distance(c, b) + 1e-7);
  }
}

TEST(Properties, ScoresAreDistributionsPeakedAtNearestAnchor) {
  std::mt19937_64 rng(3);
  const AnchorSet& a = desk_anchors();
  const CameraIntrinsics cam;
  const LabelConfig cfg;
  for (int t = 0; t < 1000; ++t) {
    const LabelTarget lt = LabelTarget::from_pose(random_pose_in(rng, a, cam), cam);
    const LabelScores s = assign_scores(lt, a, cfg);
    const std::pair<const std::vector<double>*, int> branches[] = {
        {&s.s_rotation, nearest_anchors(lt.pose.rotation, a.rotations, 1)[0]},
        {&s.s_vx, nearest_anchors(lt.vx, a.bins_vx, 1)[0]},
        {&s.s_vy, nearest_anchors(lt.vy, a.bins_vy, 1)[0]},
        {&s.s_z, nearest_anchors(lt.pose.translation.z(), a.bins_z, 1)[0]}};
    for (const auto& [v, nearest] : branches) {
      double sum = 0.0;
      for (double x : *v) {
        EXPECT_GE(x, 0.0);
        sum += x;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
      EXPECT_EQ(std::max_element(v->begin(), v->end()) - v->begin(), nearest);
    }
    EXPECT_EQ(std::ranges::count_if(s.s_rotation, [](double x) { return x > 0.0; }), 4);
    EXPECT_EQ(std::ranges::count_if(s.s_z, [](double x) { return x > 0.0; }), 7);
  }
}

// Gibbs' inequality: cross entropy against a distribution is minimized by that distribution.
TEST(Properties, SoftCrossEntropyBoundedByEntropy) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + rng() % 20;
    std::vector<double> p(n), q(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = u(rng);
      q[i] = u(rng);
    }
    const double sp = std::accumulate(p.begin(), p.end(), 0.0), sq = std::accumulate(q.begin(), q.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    EXPECT_GE(soft_cross_entropy(q, p), soft_cross_entropy(p, p) - 1e-9);
  }
}

TEST(Properties, CtcInvariantUnderBatchPermutation) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 1.0);
  const auto bins = generate_translation_bins(0.0, 2.0, 40);
  const TargetGraph tg = build_target_graph(bins, 0.0, 2.0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t b = 3 + rng() % 10;
    std::vector<std::vector<double>> f(b, std::vector<double>(8));
    std::vector<int> cls(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (auto& x : f[i]) x = d(rng);
      cls[i] = static_cast<int>(rng() % 40);
    }
    const double base = ctc_loss(batch_feature_graph(f), cls, tg);
    EXPECT_GE(base, 0.0);
    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<double>> fp;
    std::vector<int> cp;
    for (auto i : perm) {
      fp.push_back(f[i]);
      cp.push_back(cls[i]);
    }
    EXPECT_NEAR(ctc_loss(batch_feature_graph(fp), cp, tg), base, 1e-12 * (1.0 + base));
  }
}

TEST(Properties, SelectionIsMonotoneInThreshold) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<PseudoLabel> labels(300);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i].sample_id = std::to_string(i);
    labels[i].confidence = u(rng);
  }
  std::size_t prev = labels.size() + 1;
  for (double tau = 0.0; tau <= 1.0; tau += 0.05) {
    const auto sel = select_samples(labels, tau);
    EXPECT_LE(sel.size(), prev);
    prev = sel.size();
    for (const auto& l : sel) EXPECT_GT(l.confidence, tau);
  }
  SelfTrainConfig cfg;
  for (int r = 1; r < cfg.rounds; ++r) EXPECT_LE(threshold_schedule(r, cfg), threshold_schedule(r - 1, cfg));
}

TEST(Properties, SymmetryResolutionNeverIncreasesRotationError) {
  std::mt19937_64 rng(7);
  const ObjectModel box = make_object(ObjectKind::Box, 2, 64);
  ASSERT_TRUE(box.is_symmetric());
  for (int t = 0; t < 500; ++t) {
    const Mat3 pred = random_rotation(rng), gt = random_rotation(rng);
    const Mat3 r = closest_symmetric_rotation(pred, gt, box);
    EXPECT_LE(geodesic_distance(pred, r), geodesic_distance(pred, gt) + 1e-12);
    EXPECT_TRUE(is_rotation(r));
  }
}

TEST(Properties, SampledPosesStayInRange) {
  const PoseRange range;
  const CameraIntrinsics cam;
  for (std::uint64_t k = 0; k < 2000; ++k) {
    const Pose p = sample_pose(k, range, cam);
    EXPECT_TRUE(is_rotation(p.rotation, 1e-9));
    EXPECT_GE(p.translation.z(), range.z_min);
    EXPECT_LE(p.translation.z(), range.z_max);
    const double vx = project_vx(p.translation, cam), vy = project_vy(p.translation, cam);
    EXPECT_GE(vx, range.v_min - 1e-9);
    EXPECT_LE(vx, range.v_max + 1e-9);
    EXPECT_GE(vy, range.v_min - 1e-9);
    EXPECT_LE(vy, range.v_max + 1e-9);
  }
}

TEST(Properties, CosineGraphInvariantToPositiveRowScaling) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d(0.0, 1.0);
  std::uniform_real_distribution<double> s(0.1, 10.0);
  const std::size_t b = 12, c = 9;
  std::vector<double> f(b * c), g(b * c);
  for (std::size_t i = 0; i < b; ++i) {
    const double k = s(rng);
    for (std::size_t j = 0; j < c; ++j) {
      f[i * c + j] = d(rng);
      g[i * c + j] = k * f[i * c + j];
    }
  }
  std::vector<double> gf(b * b), gg(b * b);
  kernels::serial::cosine_graph(f, gf, b, c);
  kernels::serial::cosine_graph(g, gg, b, c);
  for (std::size_t i = 0; i < b * b; ++i) EXPECT_NEAR(gf[i], gg[i], 1e-12);
}
