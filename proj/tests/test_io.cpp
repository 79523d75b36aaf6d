#include "mast/app.hpp"
#include "mast/errors.hpp"
#include "mast/evaluate.hpp"
#include "mast/io.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace mast;
namespace fs = std::filesystem;

namespace {

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / (std::string("mast_io_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

Dataset small_dataset() {
  RunConfig c;
  c.data.n_source = 12;
  c.data.n_target = 9;
  c.data.n_points = 32;
  return generate_dataset(c);
}

PoseEstimator small_estimator(std::uint64_t seed) {
  AnchorSpec a;
  a.n_rot = 6;
  a.n_vx = a.n_vy = 4;
  a.n_z = 5;
  NetworkConfig n;
  n.feature_dim = 16;
  n.head_hidden = 8;
  n.zero_init_heads = false;
  n.seed = seed;
  return PoseEstimator::create(a, n, ObjectiveConfig{}, CameraIntrinsics{}, {"a", "b"});
}

// Gives every parameter and moment a distinct value so that a round trip is a real check.
void scramble(std::vector<nn::Parameter*> params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto* p : params) {
    for (auto& x : p->value.values()) x = d(rng);
    for (auto& x : p->m.values()) x = d(rng);
    for (auto& x : p->v.values()) x = std::abs(d(rng));
  }
}

void expect_same_params(std::vector<nn::Parameter*> a, std::vector<nn::Parameter*> b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_TRUE(std::ranges::equal(a[i]->value.values(), b[i]->value.values()));
    EXPECT_TRUE(std::ranges::equal(a[i]->m.values(), b[i]->m.values()));
    EXPECT_TRUE(std::ranges::equal(a[i]->v.values(), b[i]->v.values()));
  }
}

void flip_byte(const fs::path& p, std::size_t at) {
  std::string s = read_text(p);
  s[at] = static_cast<char>(s[at] ^ 0x5a);
  write_text(p, s);
}

}  // namespace

TEST(ConfigJson, SectionsRoundTrip) {
  AnchorSpec a;
  a.n_rot = 12;
  a.z_max = 1.5;
  AnchorSpec a2;
  from_json(to_json(a), a2);
  EXPECT_EQ(to_json(a2), to_json(a));

  SelfTrainConfig s;
  s.rounds = 3;
  s.tau_end = 0.2;
  SelfTrainConfig s2;
  from_json(to_json(s), s2);
  EXPECT_EQ(to_json(s2), to_json(s));

  DomainConfig d;
  d.offset = {0.1, -0.2};
  d.offset_spread = 0.5;
  DomainConfig d2;
  from_json(to_json(d), d2);
  EXPECT_EQ(d2.offset, d.offset);
  EXPECT_EQ(d2.offset_spread, 0.5);
}

TEST(ConfigJson, UnknownKeyIsConfigError) {
  AnchorSpec a;
  EXPECT_THROW(from_json(Json{{"n_rot", 60}, {"n_rotations", 5}}, a), ConfigError);
  EXPECT_THROW(run_config_from_json(Json{{"sede", 3}}), ConfigError);
}

TEST(ConfigJson, MissingKeysKeepDefaults) {
  const RunConfig c = run_config_from_json(Json{{"seed", 9}});
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(to_json(c.anchors), to_json(AnchorSpec{}));
  EXPECT_EQ(to_json(run_config_from_json(to_json(c))), to_json(c));
}

TEST(ConfigJson, InvalidValuesRejectedAtLoad) {
  EXPECT_THROW(run_config_from_json(Json{{"anchors", {{"n_rot", 0}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(Json{{"selftrain", {{"batch_size", 0}}}}), ConfigError);
}

TEST(ObjectModelJson, RoundTrip) {
  const ObjectModel m = make_object(ObjectKind::Cylinder, 3, 40);
  const ObjectModel r = object_model_from_json(to_json(m));
  ASSERT_EQ(r.points.size(), m.points.size());
  for (std::size_t i = 0; i < m.points.size(); ++i) EXPECT_EQ(r.points[i], m.points[i]);
  ASSERT_EQ(r.symmetries.size(), m.symmetries.size());
  for (std::size_t i = 0; i < m.symmetries.size(); ++i) EXPECT_EQ(r.symmetries[i], m.symmetries[i]);
  EXPECT_EQ(r.diameter, m.diameter);
}

TEST_F(IoTest, DatasetRoundTripIsExact) {
  const Dataset ds = small_dataset();
  save_dataset(ds, dir / "s.jsonl", dir / "t.jsonl");
  const Dataset r = load_dataset(dir / "s.jsonl", dir / "t.jsonl");
  ASSERT_EQ(r.samples.size(), ds.samples.size());
  ASSERT_EQ(r.objects.size(), ds.objects.size());
  EXPECT_EQ(r.seed, ds.seed);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample &a = ds.samples[i], &b = r.samples[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.domain, b.domain);
    EXPECT_EQ(a.object_id, b.object_id);
    EXPECT_EQ(a.observation, b.observation);
    EXPECT_EQ(a.eval_only(), b.eval_only());
    EXPECT_EQ(a.gt_pose().rotation, b.gt_pose().rotation);
    EXPECT_EQ(a.gt_pose().translation, b.gt_pose().translation);
  }
  // Saving the loaded copy reproduces the files byte for byte.
  save_dataset(r, dir / "s2.jsonl", dir / "t2.jsonl");
  EXPECT_EQ(read_text(dir / "s.jsonl"), read_text(dir / "s2.jsonl"));
  EXPECT_EQ(read_text(dir / "t.jsonl"), read_text(dir / "t2.jsonl"));
}

TEST_F(IoTest, ScalarDatasetRoundTrip) {
  RunConfig c;
  c.scalar.n_source = 10;
  c.scalar.n_target = 7;
  const ScalarDataset ds = generate_scalar_dataset(c);
  save_scalar_dataset(ds, dir / "x.jsonl");
  const ScalarDataset r = load_scalar_dataset(dir / "x.jsonl");
  ASSERT_EQ(r.samples.size(), ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    EXPECT_EQ(r.samples[i].observation, ds.samples[i].observation);
    EXPECT_EQ(r.samples[i].target, ds.samples[i].target);
    EXPECT_EQ(r.samples[i].eval_only, ds.samples[i].eval_only);
  }
}

TEST_F(IoTest, MalformedDatasetIsIoError) {
  write_text(dir / "s.jsonl", "not json\n");
  write_text(dir / "t.jsonl", "");
  EXPECT_THROW(load_dataset(dir / "s.jsonl", dir / "t.jsonl"), IoError);
  EXPECT_THROW(load_dataset(dir / "missing.jsonl", dir / "t.jsonl"), IoError);
}

TEST_F(IoTest, CheckpointRoundTripIsExact) {
  PoseEstimator est = small_estimator(4);
  for (std::size_t i = 0; i < est.members.size(); ++i) {
    scramble(est.members[i].net.parameters(), 10 + i);
    est.members[i].adam.set_steps(17 + static_cast<long>(i));
  }
  save_checkpoint(est, dir / "a.ckpt", Json{{"stage", "teacher"}});
  Json meta;
  PoseEstimator r = load_checkpoint(dir / "a.ckpt", &meta);
  EXPECT_EQ(meta.at("stage"), "teacher");
  ASSERT_EQ(r.members.size(), est.members.size());
  for (std::size_t i = 0; i < est.members.size(); ++i) {
    EXPECT_EQ(r.members[i].object_id, est.members[i].object_id);
    EXPECT_EQ(r.members[i].adam.steps(), est.members[i].adam.steps());
    expect_same_params(r.members[i].net.parameters(), est.members[i].net.parameters());
  }
  save_checkpoint(r, dir / "b.ckpt", meta);
  EXPECT_EQ(read_text(dir / "a.ckpt"), read_text(dir / "b.ckpt"));
  EXPECT_NO_THROW(check_compatible(r, est.anchor_spec, est.net));
}

TEST_F(IoTest, ScalarCheckpointRoundTrip) {
  ScalarEstimator est = ScalarEstimator::create(10, false, true, NetworkConfig{});
  est.objective.ctc_weight = 0.25;
  scramble(est.network.parameters(), 3);
  save_scalar_checkpoint(est, 10, false, dir / "s.ckpt");
  ScalarEstimator r = load_scalar_checkpoint(dir / "s.ckpt");
  EXPECT_EQ(r.bins, est.bins);
  EXPECT_EQ(r.objective.ctc_weight, 0.25);
  EXPECT_TRUE(r.objective.use_ctc);
  expect_same_params(r.network.parameters(), est.network.parameters());
  EXPECT_THROW(load_checkpoint(dir / "s.ckpt"), IncompatibleCheckpoint);
}

TEST_F(IoTest, CorruptCheckpointIsIoError) {
  const PoseEstimator est = small_estimator(5);
  save_checkpoint(est, dir / "a.ckpt");
  const std::string good = read_text(dir / "a.ckpt");

  flip_byte(dir / "a.ckpt", good.size() / 2);
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt"), IoError);

  write_text(dir / "a.ckpt", good.substr(0, good.size() - 9));
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt"), IoError);

  write_text(dir / "a.ckpt", good);
  flip_byte(dir / "a.ckpt", 0);
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt"), IoError);

  write_text(dir / "a.ckpt", "");
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "none.ckpt"), IoError);
}

TEST(CheckCompatible, LayoutMismatchIsIncompatible) {
  const PoseEstimator est = small_estimator(6);
  AnchorSpec a = est.anchor_spec;
  a.n_z += 1;
  EXPECT_THROW(check_compatible(est, a, est.net), IncompatibleCheckpoint);
  NetworkConfig n = est.net;
  n.feature_dim += 1;
  EXPECT_THROW(check_compatible(est, est.anchor_spec, n), IncompatibleCheckpoint);
  // The network seed only affects initialization.
  n = est.net;
  n.seed += 100;
  EXPECT_NO_THROW(check_compatible(est, est.anchor_spec, n));
}

TEST_F(IoTest, PseudoLabelCsv) {
  PseudoLabel l;
  l.sample_id = "t1";
  l.object_id = "box";
  l.pose = {Mat3::Identity(), Vec3(0.5, -0.25, 1.0)};
  l.confidence = 0.75;
  const std::vector<PseudoLabel> labels{l};
  write_pseudo_labels(dir / "p.csv", labels, 2);
  EXPECT_EQ(read_text(dir / "p.csv"),
            "sample_id,object_id,round,confidence,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz\n"
            "t1,box,2,0.75,1,0,0,0,1,0,0,0,1,0.5,-0.25,1\n");
}
