#include "generators.hpp"
#include "gradcheck.hpp"
#include "mast/errors.hpp"
#include "mast/objective.hpp"
#include "mast/synthbench.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace mast;
using gen::paper_anchors;
using gen::random_head;
using gen::random_target;
using gen::small_model;

namespace {

constexpr double kPi = std::numbers::pi;
// Slack for the 1e-12 guard inside the log.
constexpr double kLogGuard = 1e-9;

}  // namespace

TEST(SoftCrossEntropy, OneHotAgainstUniform) {
  std::vector<double> label(40, 0.0), probs(40, 1.0 / 40);
  label[7] = 1.0;
  EXPECT_NEAR(soft_cross_entropy(probs, label), std::log(40.0), kLogGuard);
}

TEST(SoftCrossEntropy, MinimizedAtLabels) {
  const std::vector<double> label{0.55, 0.075, 0.075, 0.075, 0.075, 0.075, 0.075};
  double entropy = 0.0;
  for (double l : label) entropy -= l * std::log(l);
  EXPECT_NEAR(soft_cross_entropy(label, label), entropy, 1e-10);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> p(label.size());
    double s = 0.0;
    for (auto& v : p) s += (v = u(rng));
    for (auto& v : p) v /= s;
    EXPECT_GE(soft_cross_entropy(p, label), entropy - 1e-12);
  }
}

TEST(SoftCrossEntropy, RotationLabelAgainstUniformIsLog60) {
  std::vector<double> label(60, 0.0), probs(60, 1.0 / 60);
  label[0] = 0.7;
  label[1] = label[2] = label[3] = 0.1;
  EXPECT_NEAR(soft_cross_entropy(probs, label), 0.7 * std::log(60.0) + 3 * 0.1 * std::log(60.0), kLogGuard);
  EXPECT_NEAR(soft_cross_entropy(probs, label), std::log(60.0), kLogGuard);
}

TEST(SoftCrossEntropy, LengthMismatchThrows) {
  EXPECT_THROW(soft_cross_entropy(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0}), ShapeError);
}

TEST(PointMatching, Examples) {
  const ObjectModel m = small_model(2);
  std::mt19937_64 rng(3);
  const Pose gt{random_rotation(rng), Vec3(0.1, -0.2, 1.0)};
  EXPECT_EQ(point_matching_distance(gt, gt, m), 0.0);
  Pose shifted = gt;
  shifted.translation += Vec3(0.01, -0.02, 0.03);
  EXPECT_NEAR(point_matching_distance(shifted, gt, m), 0.06, 1e-12);
  for (int t = 0; t < 20; ++t) {
    const Pose p{random_rotation(rng), Vec3(0.0, 0.1, 0.8)};
    EXPECT_NEAR(point_matching_distance(p, gt, m),
                oracle::l1_distance(p.rotation, p.translation, gt.rotation, gt.translation, m.points), 1e-12);
  }
  EXPECT_THROW(point_matching_distance(gt, gt, ObjectModel{}), InvalidArgument);
}

TEST(RegressionLoss, PerfectResidualsGiveZero) {
  const AnchorSet a = paper_anchors();
  const CameraIntrinsics cam;
  const ObjectModel m = small_model(4);
  std::mt19937_64 rng(5);
  const LabelTarget gt = random_target(rng, cam);
  HeadOutput o = random_head(a, rng);
  for (std::size_t i = 0; i < a.rotations.size(); ++i) {
    const Rotation6D r = matrix_to_rot6d(gt.pose.rotation * a.rotations[i].transpose());
    for (int c = 0; c < 3; ++c) {
      o.residuals[kRotation][6 * i + static_cast<std::size_t>(c)] = r.a1[c];
      o.residuals[kRotation][6 * i + 3 + static_cast<std::size_t>(c)] = r.a2[c];
    }
  }
  for (std::size_t i = 0; i < a.bins_vx.size(); ++i) o.residuals[kVx][i] = gt.vx - a.bins_vx[i];
  for (std::size_t i = 0; i < a.bins_vy.size(); ++i) o.residuals[kVy][i] = gt.vy - a.bins_vy[i];
  for (std::size_t i = 0; i < a.bins_z.size(); ++i) o.residuals[kZ][i] = gt.pose.translation.z() - a.bins_z[i];
  EXPECT_NEAR(regression_loss(o, {gt}, a, m, cam, 4, 7, 7), 0.0, 1e-12);
}

TEST(RegressionLoss, AnchorAlignedTargetWithKOne) {
  const AnchorSet a = paper_anchors();
  const CameraIntrinsics cam;
  const ObjectModel m = small_model(6);
  HeadOutput o;
  o.probs = {std::vector<double>(60, 1.0 / 60), std::vector<double>(20, 0.05), std::vector<double>(20, 0.05),
             std::vector<double>(40, 0.025)};
  std::vector<double> rot(360, 0.0);
  for (std::size_t i = 0; i < 60; ++i) {
    rot[6 * i] = 1.0;
    rot[6 * i + 4] = 1.0;
  }
  o.residuals = {rot, std::vector<double>(20, 0.0), std::vector<double>(20, 0.0), std::vector<double>(40, 0.0)};
  const Pose p{a.rotations[11], translation_from_image(a.bins_vx[4], a.bins_vy[13], a.bins_z[22], cam)};
  EXPECT_NEAR(regression_loss(o, {LabelTarget::from_pose(p, cam)}, a, m, cam, 1, 1, 1), 0.0, 1e-12);
}

TEST(RegressionLoss, MatchesBruteForceOracle) {
  const AnchorSet a = paper_anchors(3);
  const CameraIntrinsics cam;
  std::mt19937_64 rng(7);
  for (int t = 0; t < 200; ++t) {
    const ObjectModel m = small_model(100 + static_cast<std::uint64_t>(t), 6);
    const LabelTarget gt = random_target(rng, cam);
    const HeadOutput o = random_head(a, rng);
    const double got = regression_loss(o, {gt}, a, m, cam, 4, 7, 7);
    const double want = oracle::regression_loss(o, gt.pose, gt.vx, gt.vy, a, m.points, cam, 4, 7, 7);
    EXPECT_TRUE(oracle::rel_close(got, want, 1e-9)) << got << " vs " << want;
  }
}

TEST(RegressionLoss, KBeyondAnchorsThrows) {
  const AnchorSet a = make_anchor_set(4, 5, 5, 5, -200, 200, 0, 2, 0);
  std::mt19937_64 rng(8);
  const HeadOutput o = random_head(a, rng);
  const CameraIntrinsics cam;
  const LabelTarget gt = random_target(rng, cam);
  const ObjectModel m = small_model(1);
  EXPECT_THROW(regression_loss(o, {gt}, a, m, cam, 5, 1, 1), InvalidArgument);
  EXPECT_THROW(regression_loss(o, {gt}, a, m, cam, 1, 6, 1), InvalidArgument);
  EXPECT_THROW(regression_loss(o, {gt}, a, m, cam, 1, 1, 6), InvalidArgument);
}

TEST(RegressionLoss, GradientMatchesFiniteDifferences) {
  const AnchorSet a = make_anchor_set(8, 8, 8, 10, -200, 200, 0, 2, 1);
  const CameraIntrinsics cam;
  const ObjectModel m = small_model(9, 7);
  std::mt19937_64 rng(10);
  for (int t = 0; t < 5; ++t) {
    const LabelTarget gt = random_target(rng, cam);
    HeadOutput o = random_head(a, rng);
    std::vector<std::vector<double>> grad;
    regression_loss(o, {gt}, a, m, cam, 4, 7, 7, &grad);
    for (std::size_t b = 0; b < 4; ++b) {
      for (std::size_t i = 0; i < o.residuals[b].size(); ++i) {
        const double x = o.residuals[b][i];
        const double h = 1e-7;
        o.residuals[b][i] = x + h;
        const double up = regression_loss(o, {gt}, a, m, cam, 4, 7, 7);
        o.residuals[b][i] = x - h;
        const double down = regression_loss(o, {gt}, a, m, cam, 4, 7, 7);
        o.residuals[b][i] = x;
        EXPECT_NEAR(grad[b][i], (up - down) / (2 * h), 1e-5 * std::max(1.0, std::abs(grad[b][i])));
      }
    }
  }
}

TEST(TargetGraph, Examples) {
  const std::vector<double> ends{0.0, 2.0};
  const TargetGraph tg = build_target_graph(ends, 0.0, 2.0);
  EXPECT_NEAR(tg.angles[1], kPi / 2, 1e-15);
  EXPECT_EQ(tg(0, 0), 1.0);
  EXPECT_EQ(tg(1, 1), 1.0);
  EXPECT_NEAR(tg(0, 1), 0.0, 1e-15);
  EXPECT_THROW(build_target_graph(ends, 1.0, 1.0), InvalidArgument);
}

TEST(TargetGraph, SymmetricBoundedAndMonotone) {
  const auto bins = generate_translation_bins(0.0, 2.0, 40);
  const TargetGraph tg = build_target_graph(bins, 0.0, 2.0);
  for (std::size_t i = 0; i < tg.size; ++i) {
    EXPECT_EQ(tg(i, i), 1.0);
    for (std::size_t j = 0; j < tg.size; ++j) {
      EXPECT_EQ(tg(i, j), tg(j, i));
      EXPECT_GE(tg(i, j), 0.0);
      EXPECT_LE(tg(i, j), 1.0);
      if (j + 1 < tg.size && j >= i) EXPECT_GE(tg(i, j), tg(i, j + 1));
    }
  }
}

TEST(FeatureGraph, Examples) {
  const std::vector<std::vector<double>> same{{1, 2, 3}, {1, 2, 3}};
  EXPECT_NEAR(batch_feature_graph(same)(0, 1), 1.0, 1e-15);
  const std::vector<std::vector<double>> ortho{{1, 0, 0}, {0, 2, 0}};
  EXPECT_EQ(batch_feature_graph(ortho)(0, 1), 0.0);
  const std::vector<std::vector<double>> zero{{1, 0, 0}, {0, 0, 0}};
  EXPECT_THROW(batch_feature_graph(zero), DegenerateFeature);
}

TEST(FeatureGraph, MatchesPairwiseOracle) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> f(8, std::vector<double>(16));
  for (auto& row : f) {
    for (auto& v : row) v = n(rng);
  }
  const auto g = batch_feature_graph(f);
  const auto ref = oracle::cosine_graph(f);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(g(i, j), ref[i][j], 1e-14);
  }
}

TEST(CtcLoss, Examples) {
  const auto bins = generate_translation_bins(0.0, 2.0, 40);
  const TargetGraph tg = build_target_graph(bins, 0.0, 2.0);
  CorrelationGraph g{2, {1.0, tg(3, 17), tg(17, 3), 1.0}};
  const std::vector<int> classes{3, 17};
  EXPECT_NEAR(ctc_loss(g, classes, tg), 0.0, 1e-15);
  const double a = 0.3, b = tg(3, 17);
  g.g = {1.0, a, a, 1.0};
  EXPECT_NEAR(ctc_loss(g, classes, tg), 2 * (a - b) * (a - b), 1e-15);
  EXPECT_THROW(ctc_loss(g, std::vector<int>{3, 40}, tg), InvalidArgument);
  EXPECT_THROW(ctc_loss(g, std::vector<int>{-1, 0}, tg), InvalidArgument);
}

TEST(CtcLoss, MatchesDoubleLoopOracleAndScaleInvariant) {
  const auto bins = generate_translation_bins(0.0, 2.0, 40);
  const TargetGraph tg = build_target_graph(bins, 0.0, 2.0);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, 39);
  std::uniform_real_distribution<double> pos(0.1, 5.0);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::vector<double>> f(6, std::vector<double>(10));
    for (auto& row : f) {
      for (auto& v : row) v = n(rng);
    }
    std::vector<int> classes(6);
    for (auto& c : classes) c = cls(rng);
    const double got = ctc_loss(batch_feature_graph(f), classes, tg);
    const double want = oracle::ctc(oracle::cosine_graph(f), classes, bins, 0.0, 2.0);
    EXPECT_TRUE(oracle::rel_close(got, want, 1e-9));
    for (auto& row : f) {
      const double s = pos(rng);
      for (auto& v : row) v *= s;
    }
    EXPECT_NEAR(ctc_loss(batch_feature_graph(f), classes, tg), got, 1e-12 * std::max(1.0, got));
  }
}

TEST(CtcClass, NearestBin) {
  const auto bins = generate_translation_bins(0.0, 2.0, 40);
  EXPECT_EQ(ctc_class(0.26, bins), 5);
  EXPECT_EQ(ctc_class(1.999, bins), 39);
}

TEST(TotalObjective, SingleSampleEqualsClassificationLoss) {
  const AnchorSet a = paper_anchors();
  const CameraIntrinsics cam;
  NetworkConfig nc;
  nc.branches = pose_branches(a);
  PoseNetwork net(nc);
  ObjectiveConfig cfg;
  cfg.labels = {{1.0, 0.0, 1}, {1.0, 0.0, 1}, {1.0, 0.0, 1}, {1.0, 0.0, 1}};
  cfg.k_rotation = cfg.k_z = cfg.k_vxvy = 1;
  cfg.use_ctc = false;
  const ObjectModel m = small_model(13);
  const Pose p{a.rotations[0], translation_from_image(a.bins_vx[5], a.bins_vy[9], a.bins_z[20], cam)};
  const std::vector<LabelTarget> t{LabelTarget::from_pose(p, cam)};
  nn::Tensor obs = nn::Tensor::matrix(1, 64, 0.3);
  nn::Graph g;
  const auto vars = net.forward(g, obs);
  ObjectiveTerms terms;
  const nn::Var l = total_objective(g, vars, t, a, m, cam, cfg, nc, TargetGraph{}, &terms);
  const double c = std::log(60.0) + 2 * std::log(20.0) + std::log(40.0);
  EXPECT_NEAR(g.value(l)[0], c, kLogGuard);
  EXPECT_NEAR(terms.reg, 0.0, 1e-12);
  EXPECT_EQ(terms.ctc, 0.0);
}

TEST(TotalObjective, DuplicatedBatchKeepsPoseLoss) {
  gradcheck::PoseProblem pb(21, 4);
  pb.cfg.use_ctc = false;
  auto value = [&](const std::vector<LabelTarget>& t, const std::vector<const ObjectModel*>& m, const nn::Tensor& obs) {
    nn::Graph g;
    const auto vars = pb.net.forward(g, obs);
    return g.value(total_objective(g, vars, t, pb.anchors, m, pb.cam, pb.cfg, pb.net.config(), pb.tg))[0];
  };
  const double once = value(pb.targets, pb.models, pb.obs);
  auto t2 = pb.targets;
  t2.insert(t2.end(), pb.targets.begin(), pb.targets.end());
  auto m2 = pb.models;
  m2.insert(m2.end(), pb.models.begin(), pb.models.end());
  nn::Tensor obs2 = nn::Tensor::matrix(8, pb.obs.cols());
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < pb.obs.cols(); ++j) obs2(i, j) = pb.obs(i % 4, j);
  }
  EXPECT_NEAR(value(t2, m2, obs2), once, 1e-12 * once);
}

// L_pose + L_ctc assembled from the per-sample scalar functions.
TEST(TotalObjective, MatchesCompositionOracle) {
  gradcheck::PoseProblem pb(22, 4);
  pb.cfg.ctc_weight = 1.0;
  nn::Graph g;
  const auto vars = pb.net.forward(g, pb.obs);
  ObjectiveTerms terms;
  const double total = g.value(total_objective(g, vars, pb.targets, pb.anchors, pb.models, pb.cam, pb.cfg,
                                               pb.net.config(), pb.tg, &terms))[0];
  const auto outs = PoseNetwork::extract(g, vars, pb.net.config());
  double pose = 0.0;
  std::vector<std::vector<double>> features;
  std::vector<int> classes;
  const auto resolved = pb.resolved(outs);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const ObjectModel& m = *pb.models[i];
    const LabelTarget& gt = resolved[i].gt;
    const LabelScores s = assign_scores(gt, pb.anchors, pb.cfg.labels);
    pose += soft_cross_entropy(outs[i].probs[kRotation], s.s_rotation) +
            soft_cross_entropy(outs[i].probs[kVx], s.s_vx) + soft_cross_entropy(outs[i].probs[kVy], s.s_vy) +
            soft_cross_entropy(outs[i].probs[kZ], s.s_z);
    pose += oracle::regression_loss(outs[i], gt.pose, gt.vx, gt.vy, pb.anchors, m.points, pb.cam, 4, 7, 7);
    features.push_back(outs[i].feature);
    classes.push_back(oracle::nearest_scalars(pb.targets[i].pose.translation.z(), pb.anchors.bins_z, 1)[0]);
  }
  const double ctc = oracle::ctc(oracle::cosine_graph(features), classes, pb.anchors.bins_z, 0.0, 2.0);
  EXPECT_TRUE(oracle::rel_close(total, pose / 4.0 + ctc, 1e-9)) << total << " vs " << pose / 4.0 + ctc;
  EXPECT_TRUE(oracle::rel_close(terms.ctc, ctc, 1e-9));
}

TEST(TotalObjective, EmptyBatchThrows) {
  gradcheck::PoseProblem pb(23, 2);
  nn::Graph g;
  const auto vars = pb.net.forward(g, pb.obs);
  EXPECT_THROW(total_objective(g, vars, std::span<const LabelTarget>{}, pb.anchors,
                               std::span<const ObjectModel* const>{}, pb.cam, pb.cfg, pb.net.config(), pb.tg),
               InvalidArgument);
}

TEST(TotalObjective, NonNegative) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    gradcheck::PoseProblem pb(30 + s, 5);
    nn::Graph g;
    const auto vars = pb.net.forward(g, pb.obs);
    EXPECT_GE(g.value(total_objective(g, vars, pb.targets, pb.anchors, pb.models, pb.cam, pb.cfg, pb.net.config(),
                                      pb.tg))[0],
              0.0);
  }
}

TEST(ScalarRegression, PerfectResidualGivesZero) {
  const auto bins = generate_translation_bins(kScalarMin, kScalarMax, 20);
  HeadOutput o;
  o.probs = {std::vector<double>(20, 0.05)};
  o.residuals = {std::vector<double>(20)};
  for (std::size_t i = 0; i < 20; ++i) o.residuals[0][i] = 0.73 - bins[i];
  EXPECT_NEAR(scalar_regression_loss(o, 0.73, bins, 7), 0.0, 1e-15);
  o.residuals[0].assign(20, 0.0);
  const auto nb = oracle::nearest_scalars(0.73, bins, 7);
  double want = 0.0;
  for (int i : nb) want += std::abs(bins[static_cast<std::size_t>(i)] - 0.73);
  EXPECT_NEAR(scalar_regression_loss(o, 0.73, bins, 7), want, 1e-15);
}

TEST(ObjectiveConfig, Validation) {
  ObjectiveConfig c;
  EXPECT_NO_THROW(c.validate());
  c.k_z = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ObjectiveConfig{};
  c.ctc_weight = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

class GradientCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradientCheck, PoseLossesMatchFiniteDifferences) {
  for (const auto& rep : gradcheck::check_pose_losses(GetParam(), 25)) {
    EXPECT_GE(rep.probes.size(), 20u) << rep.loss;
    EXPECT_LT(rep.max_rel_error(), 1e-4) << rep.loss;
  }
}

TEST_P(GradientCheck, ScalarLossMatchesFiniteDifferences) {
  const auto rep = gradcheck::check_scalar_total(GetParam(), 25);
  EXPECT_GE(rep.probes.size(), 20u);
  EXPECT_LT(rep.max_rel_error(), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradientCheck, ::testing::Values(1u, 2u, 3u, 4u, 5u));
