#include "mast/errors.hpp"
#include "mast/evaluate.hpp"
#include "mast/selftrain.hpp"
#include "mast/synthbench.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace mast;

namespace {

using L = ObservationLayout;

// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
double ks_p_value(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  const double ne = static_cast<double>(a.size() * b.size()) / static_cast<double>(a.size() + b.size());
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) q += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(q, 0.0, 1.0);
}

double nearest_anchor_distance(const RotationMatrix& r, const std::vector<RotationMatrix>& anchors) {
  double best = 1e9;
  for (const auto& a : anchors) best = std::min(best, geodesic_distance(r, a));
  return best;
}

std::vector<NamedObject> three_objects(int n_points = 64) {
  return {{"blob", ObjectKind::Blob, 1, make_object(ObjectKind::Blob, 1, n_points)},
          {"cyl", ObjectKind::Cylinder, 2, make_object(ObjectKind::Cylinder, 2, n_points)},
          {"box", ObjectKind::Box, 3, make_object(ObjectKind::Box, 3, n_points)}};
}

}  // namespace

TEST(MakeObject, UnitBoxDiameter) {
  const ObjectModel m = make_object(ObjectKind::UnitBox, 5, 200);
  EXPECT_NEAR(m.diameter, std::sqrt(3.0), 1e-9);
  EXPECT_EQ(m.symmetries.size(), 24u);
}

TEST(MakeObject, Deterministic) {
  for (auto kind : {ObjectKind::UnitBox, ObjectKind::Box, ObjectKind::Cylinder, ObjectKind::Blob}) {
    const ObjectModel a = make_object(kind, 9, 50), b = make_object(kind, 9, 50);
    ASSERT_EQ(a.points.size(), 50u);
    for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points[i], b.points[i]);
    EXPECT_EQ(a.diameter, point_cloud_diameter(a.points));
  }
  EXPECT_THROW(make_object(ObjectKind::Blob, 1, 3), InvalidArgument);
  EXPECT_THROW(parse_object_kind("teapot"), InvalidArgument);
}

TEST(MakeObject, SymmetricFamilyAddSZeroUnderSymmetry) {
  const ObjectModel m = make_object(ObjectKind::Cylinder, 4, 80);
  ASSERT_GE(m.symmetries.size(), 2u);
  std::mt19937_64 rng(1);
  const Pose gt{random_rotation(rng), Vec3(0.0, 0.0, 1.0)};
  const Pose p{gt.rotation * m.symmetries[1], gt.translation};
  EXPECT_NEAR(add_s_metric(p, gt, m), 0.0, 1e-12);
  EXPECT_GT(add_metric(p, gt, m), 0.01 * m.diameter);
}

TEST(Synthesize, DeterministicWithoutNoise) {
  const ObservationSynth synth(7);
  const ObjectModel m = make_object(ObjectKind::Blob, 2, 64);
  const CameraIntrinsics cam;
  std::mt19937_64 rng(3);
  const Pose p{random_rotation(rng), translation_from_image(10, -20, 0.9, cam)};
  const DomainConfig dc;
  const auto a = synth.synthesize(p, m, cam, dc, 1), b = synth.synthesize(p, m, cam, dc, 2);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, synth.clean(p, m, cam));
  EXPECT_EQ(a.size(), static_cast<std::size_t>(L::kDim));
}

TEST(Synthesize, DepthChangesApparentSize) {
  const ObservationSynth synth(7);
  const ObjectModel m = make_object(ObjectKind::Box, 2, 64);
  const CameraIntrinsics cam;
  const Pose near{Mat3::Identity(), translation_from_image(0, 0, 0.7, cam)};
  const Pose far{Mat3::Identity(), translation_from_image(0, 0, 1.3, cam)};
  const auto a = synth.clean(near, m, cam), b = synth.clean(far, m, cam);
  EXPECT_GT(a[L::kSize], b[L::kSize]);
  EXPECT_EQ(a[L::kCenter], b[L::kCenter]);
}

TEST(Synthesize, MeanDisplacementEqualsOffset) {
  const ObservationSynth synth(7);
  const ObjectModel m = make_object(ObjectKind::Blob, 2, 64);
  const CameraIntrinsics cam;
  const Pose p{Mat3::Identity(), translation_from_image(5, 5, 1.0, cam)};
  DomainConfig src, tgt;
  src.noise = 0.01;
  src.seed = 1;
  tgt.noise = 0.02;
  tgt.seed = 2;
  tgt.offset = make_domain_offset(0.1, L::kNuisanceBegin, L::kNuisanceChannels, 3);
  const int n = 2000;
  std::vector<double> mean(L::kDim, 0.0);
  for (int k = 0; k < n; ++k) {
    const auto a = synth.synthesize(p, m, cam, src, static_cast<std::uint64_t>(k));
    const auto b = synth.synthesize(p, m, cam, tgt, static_cast<std::uint64_t>(k));
    for (int c = 0; c < L::kDim; ++c) mean[c] += (b[c] - a[c]) / n;
  }
  const double sigma = std::sqrt(0.01 * 0.01 + 0.02 * 0.02) / std::sqrt(static_cast<double>(n));
  for (int c = 0; c < L::kDim; ++c) EXPECT_NEAR(mean[c], tgt.offset[c], 3.0 * sigma) << c;
}

TEST(Synthesize, OffsetSpreadScalesPerSample) {
  const ObservationSynth synth(7);
  const ObjectModel m = make_object(ObjectKind::Blob, 2, 64);
  const CameraIntrinsics cam;
  const Pose p{Mat3::Identity(), translation_from_image(0, 0, 1.0, cam)};
  DomainConfig dc;
  dc.offset = make_domain_offset(0.2, L::kNuisanceBegin, L::kNuisanceChannels, 3);
  dc.offset_spread = 0.5;
  const auto clean = synth.clean(p, m, cam);
  double lo = 10.0, hi = -10.0;
  for (std::uint64_t k = 0; k < 500; ++k) {
    const auto o = synth.synthesize(p, m, cam, dc, k);
    const double s = (o[L::kNuisanceBegin] - clean[L::kNuisanceBegin]) / dc.offset[L::kNuisanceBegin];
    // All nuisance channels of one sample share the scale.
    const double s2 = (o[L::kDim - 1] - clean[L::kDim - 1]) / dc.offset[L::kDim - 1];
    EXPECT_NEAR(s, s2, 1e-12);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  EXPECT_GE(lo, 0.5);
  EXPECT_LE(hi, 1.5);
  EXPECT_LT(lo, 0.6);
  EXPECT_GT(hi, 1.4);
}

TEST(DomainConfig, Validation) {
  DomainConfig dc;
  dc.noise = -1.0;
  EXPECT_THROW(dc.validate(64), ConfigError);
  dc = DomainConfig{};
  dc.dropout = 1.5;
  EXPECT_THROW(dc.validate(64), ConfigError);
  dc = DomainConfig{};
  dc.offset.assign(63, 0.0);
  EXPECT_THROW(dc.validate(64), ConfigError);
  dc = DomainConfig{};
  dc.offset_spread = 1.1;
  EXPECT_THROW(dc.validate(64), ConfigError);
}

TEST(MakeDataset, ReproducibleAndInRange) {
  DomainConfig src, tgt;
  src.noise = 0.01;
  tgt.noise = 0.02;
  tgt.offset = make_domain_offset(0.1, L::kNuisanceBegin, L::kNuisanceChannels, 1);
  const CameraIntrinsics cam;
  const Dataset a = make_dataset(60, 30, three_objects(), cam, src, tgt, 11);
  const Dataset b = make_dataset(60, 30, three_objects(), cam, src, tgt, 11);
  ASSERT_EQ(a.samples.size(), 90u);
  EXPECT_EQ(a.split(Domain::Source).size(), 60u);
  EXPECT_EQ(a.split(Domain::Target, "cyl").size(), 10u);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const Sample& s = a.samples[i];
    EXPECT_EQ(s.id, b.samples[i].id);
    EXPECT_EQ(s.observation, b.samples[i].observation);
    EXPECT_EQ(s.gt_pose().translation, b.samples[i].gt_pose().translation);
    const double z = s.gt_pose().translation.z();
    EXPECT_GE(z, a.range.z_min);
    EXPECT_LE(z, a.range.z_max);
    EXPECT_EQ(s.eval_only(), s.domain == Domain::Target);
    EXPECT_GT(s.box.width(), 0.0);
  }
  EXPECT_THROW(make_dataset(0, 1, three_objects(), cam, src, tgt, 1), InvalidArgument);
}

TEST(MakeDataset, TargetGroundTruthAuditedDuringTraining) {
  const Dataset ds = make_dataset(3, 3, three_objects(8), CameraIntrinsics{}, {}, {}, 2);
  const Sample* src = ds.split(Domain::Source)[0];
  const Sample* tgt = ds.split(Domain::Target)[0];
  {
    TrainingAuditScope scope;
    EXPECT_NO_THROW(src->gt_pose());
    EXPECT_THROW(tgt->gt_pose(), AuditViolation);
  }
  EXPECT_NO_THROW(tgt->gt_pose());
}

TEST(MakeDataset, RotationsUniformAgainstAnchors) {
  const auto anchors = generate_rotation_anchors(60, 0);
  const Dataset ds = make_dataset(1500, 1, three_objects(8), CameraIntrinsics{}, {}, {}, 21);
  std::vector<double> sampled, fresh;
  for (const Sample* s : ds.split(Domain::Source)) sampled.push_back(nearest_anchor_distance(s->gt_pose().rotation, anchors));
  std::mt19937_64 rng(99);
  for (int i = 0; i < 1500; ++i) fresh.push_back(nearest_anchor_distance(random_rotation(rng), anchors));
  EXPECT_GT(ks_p_value(sampled, fresh), 0.01);
}

TEST(ScalarTask, DeterministicAndInRange) {
  ScalarShiftConfig shift;
  shift.target.offset = make_domain_offset(0.1, L::kNuisanceBegin, L::kNuisanceChannels, 1);
  const ScalarDataset a = make_scalar_task(50, 40, shift, 3), b = make_scalar_task(50, 40, shift, 3);
  ASSERT_EQ(a.samples.size(), 90u);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].observation, b.samples[i].observation);
    EXPECT_GE(a.samples[i].target, kScalarMin);
    EXPECT_LE(a.samples[i].target, kScalarMax);
  }
  EXPECT_EQ(a.split(Domain::Target).size(), 40u);
}

// Supervised upper bound: a network trained directly on target labels.
TEST(ScalarTask, LearnableFromTargetLabels) {
  ScalarShiftConfig shift;
  shift.target.noise = 0.005;
  shift.target.offset = make_domain_offset(0.1, L::kNuisanceBegin, L::kNuisanceChannels, 1);
  const ScalarDataset ds = make_scalar_task(1, 3000, shift, 5);
  const auto target = ds.split(Domain::Target);
  const std::span<const ScalarSample* const> train(target.data(), 2500), test(target.data() + 2500, 500);
  std::vector<double> labels;
  for (const auto* s : train) labels.push_back(s->label());
  NetworkConfig net;
  net.seed = 1;
  ScalarEstimator est = ScalarEstimator::create(1, true, false, net);
  train_scalar(est, train, labels, 60, 1e-3, 32, 2);
  EXPECT_LT(scalar_mae(est, test), 0.01);
}
