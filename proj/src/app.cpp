#include "mast/app.hpp"

#include "mast/errors.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <iostream>
#include <set>

namespace mast {

namespace fs = std::filesystem;

DomainConfig DomainSpec::build(std::uint64_t seed) const {
  DomainConfig d;
  d.offset = make_domain_offset(offset, offset_begin, offset_count, mix_seed(seed, 0x6f6666), ObservationLayout::kDim);
  d.noise = noise;
  d.dropout = dropout;
  d.depth_noise = depth_noise;
  d.offset_spread = offset_spread;
  d.seed = seed;
  return d;
}

namespace {

template <typename T>
void get(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("invalid value for '{}': {}", key, e.what()));
  }
}

Json to_json(const DomainSpec& d) {
  return {{"offset", d.offset},
          {"offset_begin", d.offset_begin},
          {"offset_count", d.offset_count},
          {"noise", d.noise},
          {"dropout", d.dropout},
          {"depth_noise", d.depth_noise},
          {"offset_spread", d.offset_spread}};
}

void from_json(const Json& j, DomainSpec& d, const std::string& section) {
  check_keys(j, {"offset", "offset_begin", "offset_count", "noise", "dropout", "depth_noise", "offset_spread"},
             section);
  get(j, "offset", d.offset);
  get(j, "offset_begin", d.offset_begin);
  get(j, "offset_count", d.offset_count);
  get(j, "noise", d.noise);
  get(j, "dropout", d.dropout);
  get(j, "depth_noise", d.depth_noise);
  get(j, "offset_spread", d.offset_spread);
}

void validate_domain(const DomainSpec& d, const std::string& section) {
  if (d.offset_begin < 0 || d.offset_count < 0 || d.offset_begin + d.offset_count > ObservationLayout::kDim) {
    throw ConfigError(section + ": offset channel range exceeds the observation");
  }
  if (!(d.noise >= 0.0)) throw ConfigError(section + ": noise must be non-negative");
  if (!(d.dropout >= 0.0 && d.dropout <= 1.0)) throw ConfigError(section + ": dropout must lie in [0, 1]");
  if (!(d.depth_noise >= 0.0)) throw ConfigError(section + ": depth noise must be non-negative");
  if (!(d.offset_spread >= 0.0 && d.offset_spread <= 1.0)) {
    throw ConfigError(section + ": offset spread must lie in [0, 1]");
  }
}

// Seed streams derived from the run seed.
enum SeedStream : std::uint64_t {
  kSeedData = 1,
  kSeedSource = 2,
  kSeedTarget = 3,
  kSeedNetwork = 4,
  kSeedTrain = 5,
  kSeedScalar = 6,
  kSeedScalarSource = 7,
  kSeedScalarTarget = 8,
};

}  // namespace

void RunConfig::validate() const {
  try {
    camera.validate();
    if (data.n_source < 1 || data.n_target < 1) throw ConfigError("data: sample counts must be >= 1");
    if (data.n_points < 4) throw ConfigError("data: n_points must be >= 4");
    if (data.objects.empty()) throw ConfigError("data: at least one object is required");
    std::set<std::string> ids;
    for (const auto& o : data.objects) {
      if (o.id.empty() || !ids.insert(o.id).second) throw ConfigError("data: object ids must be unique and nonempty");
    }
    const PoseRange& r = data.range;
    if (!(r.z_min > 0.0) || !(r.z_max > r.z_min)) throw ConfigError("data: depth range must satisfy 0 < z_min < z_max");
    if (!(r.v_max > r.v_min)) throw ConfigError("data: image offset range is empty");
    anchors.validate();
    if (r.z_min < anchors.z_min || r.z_max > anchors.z_max || r.v_min < anchors.v_min || r.v_max > anchors.v_max) {
      throw ConfigError("data: pose range must lie inside the anchor ranges");
    }
    validate_domain(data.source, "data.source");
    validate_domain(data.target, "data.target");
    validate_domain(scalar.source, "scalar.source");
    validate_domain(scalar.target, "scalar.target");
    if (scalar.n_source < 1 || scalar.n_target < 1) throw ConfigError("scalar: sample counts must be >= 1");
    if (scalar.bins < 7) throw ConfigError("scalar: at least 7 bins are required");
    if (scalar.epochs < 0) throw ConfigError("scalar: epochs must be >= 0");
    if (!(scalar.lr > 0.0)) throw ConfigError("scalar: learning rate must be positive");
    if (!(scalar.ctc_weight >= 0.0)) throw ConfigError("scalar: ctc weight must be non-negative");
    objective.validate();
    if (objective.k_rotation > anchors.n_rot || objective.labels.rotation.k > anchors.n_rot ||
        objective.k_z > anchors.n_z || objective.labels.z.k > anchors.n_z ||
        objective.k_vxvy > std::min(anchors.n_vx, anchors.n_vy) || objective.labels.vx.k > anchors.n_vx ||
        objective.labels.vy.k > anchors.n_vy) {
      throw ConfigError("objective: neighborhood sizes exceed the anchor counts");
    }
    NetworkConfig n = network;
    n.branches = pose_branches(anchors.build());
    if (n.input_dim != ObservationLayout::kDim) throw ConfigError("network: input_dim must equal the observation size");
    n.validate();
    selftrain.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

Json to_json(const RunConfig& c) {
  Json objects = Json::array();
  for (const auto& o : c.data.objects) objects.push_back({{"id", o.id}, {"kind", to_string(o.kind)}, {"seed", o.seed}});
  Json network = to_json(c.network);
  network.erase("seed");
  Json selftrain = to_json(c.selftrain);
  selftrain.erase("seed");
  return {{"seed", c.seed},
          {"camera", to_json(c.camera)},
          {"data",
           {{"n_source", c.data.n_source},
            {"n_target", c.data.n_target},
            {"n_points", c.data.n_points},
            {"objects", objects},
            {"range", to_json(c.data.range)},
            {"source", to_json(c.data.source)},
            {"target", to_json(c.data.target)},
            {"embedding_seed", c.data.embedding_seed}}},
          {"scalar",
           {{"n_source", c.scalar.n_source},
            {"n_target", c.scalar.n_target},
            {"bins", c.scalar.bins},
            {"epochs", c.scalar.epochs},
            {"lr", c.scalar.lr},
            {"ctc_weight", c.scalar.ctc_weight},
            {"source", to_json(c.scalar.source)},
            {"target", to_json(c.scalar.target)},
            {"embedding_seed", c.scalar.embedding_seed}}},
          {"anchors", to_json(c.anchors)},
          {"network", network},
          {"objective", to_json(c.objective)},
          {"selftrain", selftrain}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  try {
    check_keys(j, {"seed", "camera", "data", "scalar", "anchors", "network", "objective", "selftrain"}, "config");
    get(j, "seed", c.seed);
    if (j.contains("camera")) from_json(j.at("camera"), c.camera);
    if (j.contains("data")) {
      const Json& d = j.at("data");
      check_keys(d, {"n_source", "n_target", "n_points", "objects", "range", "source", "target", "embedding_seed"},
                 "data");
      get(d, "n_source", c.data.n_source);
      get(d, "n_target", c.data.n_target);
      get(d, "n_points", c.data.n_points);
      get(d, "embedding_seed", c.data.embedding_seed);
      if (d.contains("objects")) {
        c.data.objects.clear();
        for (const auto& o : d.at("objects")) {
          check_keys(o, {"id", "kind", "seed"}, "data.objects");
          ObjectSpec s;
          s.id = o.at("id").get<std::string>();
          try {
            s.kind = parse_object_kind(o.at("kind").get<std::string>());
          } catch (const InvalidArgument& e) {
            throw ConfigError(e.what());
          }
          get(o, "seed", s.seed);
          c.data.objects.push_back(s);
        }
      }
      if (d.contains("range")) from_json(d.at("range"), c.data.range);
      if (d.contains("source")) from_json(d.at("source"), c.data.source, "data.source");
      if (d.contains("target")) from_json(d.at("target"), c.data.target, "data.target");
    }
    if (j.contains("scalar")) {
      const Json& s = j.at("scalar");
      check_keys(s, {"n_source", "n_target", "bins", "epochs", "lr", "ctc_weight", "source", "target", "embedding_seed"},
                 "scalar");
      get(s, "n_source", c.scalar.n_source);
      get(s, "n_target", c.scalar.n_target);
      get(s, "bins", c.scalar.bins);
      get(s, "epochs", c.scalar.epochs);
      get(s, "lr", c.scalar.lr);
      get(s, "ctc_weight", c.scalar.ctc_weight);
      get(s, "embedding_seed", c.scalar.embedding_seed);
      if (s.contains("source")) from_json(s.at("source"), c.scalar.source, "scalar.source");
      if (s.contains("target")) from_json(s.at("target"), c.scalar.target, "scalar.target");
    }
    if (j.contains("anchors")) from_json(j.at("anchors"), c.anchors);
    if (j.contains("network")) from_json(j.at("network"), c.network);
    if (j.contains("objective")) from_json(j.at("objective"), c.objective);
    if (j.contains("selftrain")) from_json(j.at("selftrain"), c.selftrain);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

Stage parse_stage(const std::string& s) {
  if (s == "teacher") return Stage::Teacher;
  if (s == "student") return Stage::Student;
  if (s == "baseline-regression") return Stage::BaselineRegression;
  if (s == "no-ctc") return Stage::NoCtc;
  if (s == "student-no-ctc") return Stage::StudentNoCtc;
  throw ConfigError("unknown stage: " + s);
}

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Teacher: return "teacher";
    case Stage::Student: return "student";
    case Stage::BaselineRegression: return "baseline-regression";
    case Stage::NoCtc: return "no-ctc";
    case Stage::StudentNoCtc: return "student-no-ctc";
  }
  return "?";
}

bool is_student(Stage s) { return s == Stage::Student || s == Stage::StudentNoCtc; }

Stage teacher_of(Stage s) {
  if (s == Stage::Student) return Stage::Teacher;
  if (s == Stage::StudentNoCtc) return Stage::NoCtc;
  throw InvalidArgument("teacher_of: " + to_string(s) + " is not a student stage");
}

AnchorSpec stage_anchors(const RunConfig& c, Stage s) {
  return s == Stage::BaselineRegression ? direct_regression_anchors(c.anchors) : c.anchors;
}

NetworkConfig stage_network(const RunConfig& c, Stage s) {
  NetworkConfig n = c.network;
  n.seed = mix_seed(c.seed, kSeedNetwork + (c.network.seed << 8));
  if (s == Stage::BaselineRegression) n.classifier = false;
  return n;
}

ObjectiveConfig stage_objective(const RunConfig& c, Stage s) {
  if (s == Stage::BaselineRegression) return direct_regression_objective(c.objective);
  ObjectiveConfig o = c.objective;
  if (s == Stage::NoCtc || s == Stage::StudentNoCtc) o.use_ctc = false;
  return o;
}

SelfTrainConfig stage_selftrain(const RunConfig& c) {
  SelfTrainConfig st = c.selftrain;
  st.seed = mix_seed(c.seed, kSeedTrain + (c.selftrain.seed << 8));
  return st;
}

Dataset generate_dataset(const RunConfig& c) {
  std::vector<NamedObject> objects;
  for (const auto& o : c.data.objects) objects.push_back({o.id, o.kind, o.seed, make_object(o.kind, o.seed, c.data.n_points)});
  return make_dataset(c.data.n_source, c.data.n_target, std::move(objects), c.camera,
                      c.data.source.build(mix_seed(c.seed, kSeedSource)),
                      c.data.target.build(mix_seed(c.seed, kSeedTarget)), mix_seed(c.seed, kSeedData), c.data.range,
                      c.data.embedding_seed);
}

ScalarDataset generate_scalar_dataset(const RunConfig& c) {
  ScalarShiftConfig shift{c.scalar.source.build(mix_seed(c.seed, kSeedScalarSource)),
                          c.scalar.target.build(mix_seed(c.seed, kSeedScalarTarget)), c.scalar.embedding_seed};
  return make_scalar_task(c.scalar.n_source, c.scalar.n_target, shift, mix_seed(c.seed, kSeedScalar));
}

StageResult run_stage(const RunConfig& c, Stage s, const Dataset& ds, const PoseEstimator* teacher,
                      PoseEstimator* failed) {
  const SelfTrainConfig st = stage_selftrain(c);
  const auto source = ds.split(Domain::Source);
  const auto target = ds.split(Domain::Target);
  if (is_student(s)) {
    if (teacher == nullptr) throw DependencyError(to_string(s) + " requires a trained " + to_string(teacher_of(s)));
    PoseEstimator init = *teacher;
    init.objective = stage_objective(c, s);
    StudentResult res = train_student(init, source, target, ds, st, failed);
    return {std::move(res.student), {}, std::move(res.rounds)};
  }
  std::vector<std::string> ids;
  for (const auto& o : ds.objects) ids.push_back(o.id);
  StageResult out{PoseEstimator::create(stage_anchors(c, s), stage_network(c, s), stage_objective(c, s), ds.camera, ids),
                  {}, {}};
  try {
    out.logs = train_teacher(out.estimator, source, ds, st);
  } catch (const TrainingFailure&) {
    if (failed != nullptr) *failed = out.estimator;
    throw;
  }
  return out;
}

ScalarStageResult run_scalar_stage(const RunConfig& c, Stage s, const ScalarDataset& ds, const ScalarEstimator* teacher) {
  const SelfTrainConfig st = stage_selftrain(c);
  const auto source = ds.split(Domain::Source);
  const auto target = ds.split(Domain::Target);
  if (is_student(s)) {
    if (teacher == nullptr) throw DependencyError(to_string(s) + " requires a trained " + to_string(teacher_of(s)));
    ScalarStageResult out{*teacher, {}, {}};
    out.rounds = self_train_scalar(out.estimator, source, target, st);
    return out;
  }
  const bool use_ctc = s != Stage::NoCtc && c.objective.use_ctc;
  ScalarStageResult out{
      ScalarEstimator::create(c.scalar.bins, s == Stage::BaselineRegression, use_ctc, stage_network(c, s)), {}, {}};
  out.estimator.objective.ctc_weight = c.scalar.ctc_weight;
  const TrainingAuditScope audit;
  std::vector<double> labels;
  for (const auto* x : source) labels.push_back(x->label());
  out.logs = train_scalar(out.estimator, source, labels, c.scalar.epochs, c.scalar.lr, st.batch_size, st.seed,
                          st.cosine_lr);
  return out;
}

namespace {

fs::path data_dir(const CommandOptions& o) { return o.data.value_or(o.out / "data"); }

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw DependencyError(fmt::format("missing {}: {}", what, p.string()));
}

Dataset load_run_dataset(const CommandOptions& o) {
  const fs::path dir = data_dir(o);
  require_file(dir / "source.jsonl", "source dataset (run gen-data first)");
  require_file(dir / "target.jsonl", "target dataset (run gen-data first)");
  return load_dataset(dir / "source.jsonl", dir / "target.jsonl");
}

ScalarDataset load_run_scalar_dataset(const CommandOptions& o) {
  const fs::path p = data_dir(o) / "scalar.jsonl";
  require_file(p, "scalar dataset (run gen-data --scalar-task first)");
  return load_scalar_dataset(p);
}

void save_config(const RunConfig& c, const CommandOptions& o) {
  write_text(o.out / "config.json", to_json(c).dump(2) + "\n");
}

void write_train_log(const fs::path& path, std::span<const EpochLog> logs) {
  std::string s = "object,epoch,loss,ctc\n";
  for (const auto& l : logs) s += fmt::format("{},{},{},{}\n", l.object_id, l.epoch, l.loss, l.ctc);
  write_text(path, s);
}

// Recall tables and per-sample records on both domains.
std::pair<double, double> write_pose_reports(const PoseEstimator& est, const Dataset& ds, const fs::path& dir) {
  double recall[2] = {0.0, 0.0};
  const Domain domains[2] = {Domain::Source, Domain::Target};
  for (int k = 0; k < 2; ++k) {
    const auto samples = ds.split(domains[k]);
    const auto records = evaluate_estimator(est, samples, ds);
    const auto table = recall_table(records);
    write_recall_table(dir / ("recall_" + to_string(domains[k]) + ".csv"), table);
    write_records(dir / ("records_" + to_string(domains[k]) + ".csv"), records);
    recall[k] = average_recall(records);
  }
  return {recall[0], recall[1]};
}

Json stage_meta(const RunConfig& c, Stage s) { return {{"stage", to_string(s)}, {"seed", c.seed}}; }

fs::path default_checkpoint(const CommandOptions& o, const std::string& stage) {
  return o.out / (stage + (o.scalar_task ? ".scalar.ckpt" : ".ckpt"));
}

void write_mae(const fs::path& path, double source, double target) {
  write_text(path, fmt::format("domain,mae\nsource,{}\ntarget,{}\n", source, target));
}

void train_scalar_stage(const RunConfig& c, Stage s, const CommandOptions& o, std::ostream& log) {
  const ScalarDataset ds = load_run_scalar_dataset(o);
  const fs::path dir = o.out / ("scalar-" + to_string(s));
  std::optional<ScalarEstimator> teacher;
  if (is_student(s)) {
    const fs::path ckpt = o.checkpoint.value_or(default_checkpoint(o, to_string(teacher_of(s))));
    require_file(ckpt, "scalar teacher checkpoint (run train --scalar-task --stage " + to_string(teacher_of(s)) + ")");
    teacher = load_scalar_checkpoint(ckpt);
  }
  const ScalarStageResult res = run_scalar_stage(c, s, ds, teacher ? &*teacher : nullptr);
  const ScalarEstimator& est = res.estimator;
  if (is_student(s)) {
    write_round_stats(dir / "rounds.csv", res.rounds);
  } else {
    write_train_log(dir / "train_log.csv", res.logs);
  }
  const double ms = scalar_mae(est, ds.split(Domain::Source)), mt = scalar_mae(est, ds.split(Domain::Target));
  write_mae(dir / "mae.csv", ms, mt);
  save_scalar_checkpoint(est, c.scalar.bins, s == Stage::BaselineRegression, default_checkpoint(o, to_string(s)),
                         stage_meta(c, s));
  log << fmt::format("scalar {}: MAE source {:.4f} target {:.4f}\n", to_string(s), ms, mt);
}

}  // namespace

void cmd_gen_data(const RunConfig& c, const CommandOptions& o, std::ostream& log) {
  c.validate();
  save_config(c, o);
  const fs::path dir = data_dir(o);
  if (o.scalar_task) {
    const ScalarDataset ds = generate_scalar_dataset(c);
    save_scalar_dataset(ds, dir / "scalar.jsonl");
    log << fmt::format("scalar task: {} source, {} target samples, seed {}\n", ds.split(Domain::Source).size(),
                       ds.split(Domain::Target).size(), c.seed);
    return;
  }
  const Dataset ds = generate_dataset(c);
  save_dataset(ds, dir / "source.jsonl", dir / "target.jsonl");
  log << fmt::format("dataset: {} source, {} target samples, {} objects, seed {}\n", ds.split(Domain::Source).size(),
                     ds.split(Domain::Target).size(), ds.objects.size(), c.seed);
}

void cmd_train(const RunConfig& c, Stage s, const CommandOptions& o, std::ostream& log) {
  c.validate();
  save_config(c, o);
  if (o.scalar_task) {
    train_scalar_stage(c, s, o, log);
    return;
  }
  const Dataset ds = load_run_dataset(o);
  std::optional<PoseEstimator> teacher;
  if (is_student(s)) {
    const fs::path ckpt = o.checkpoint.value_or(default_checkpoint(o, to_string(teacher_of(s))));
    require_file(ckpt, to_string(teacher_of(s)) + " checkpoint (run train --stage " + to_string(teacher_of(s)) + ")");
    teacher = load_checkpoint(ckpt);
    check_compatible(*teacher, stage_anchors(c, teacher_of(s)), stage_network(c, teacher_of(s)));
  }
  const fs::path dir = o.out / to_string(s);
  PoseEstimator failed;
  StageResult res;
  try {
    res = run_stage(c, s, ds, teacher ? &*teacher : nullptr, &failed);
  } catch (const TrainingFailure&) {
    if (!failed.members.empty()) save_checkpoint(failed, o.out / (to_string(s) + ".failed.ckpt"), stage_meta(c, s));
    throw;
  }
  if (is_student(s)) {
    fill_selected_recall(res.rounds, ds);
    std::vector<RoundStats> stats;
    for (const auto& r : res.rounds) {
      stats.push_back(r.stats);
      write_pseudo_labels(dir / "pseudo_labels" / fmt::format("round_{}.csv", r.stats.round), r.annotations,
                          r.stats.round);
    }
    write_round_stats(dir / "rounds.csv", stats);
  } else {
    write_train_log(dir / "train_log.csv", res.logs);
  }
  save_checkpoint(res.estimator, default_checkpoint(o, to_string(s)), stage_meta(c, s));
  const auto [rs, rt] = write_pose_reports(res.estimator, ds, dir);
  log << fmt::format("{}: recall source {:.1f} target {:.1f}\n", to_string(s), rs, rt);
}

void cmd_eval(const RunConfig& c, const CommandOptions& o, std::ostream& log) {
  c.validate();
  save_config(c, o);
  const fs::path ckpt = o.checkpoint.value_or(default_checkpoint(o, "teacher"));
  require_file(ckpt, "checkpoint");
  const fs::path dir = o.out / "eval" / ckpt.stem();
  if (o.scalar_task) {
    Json meta;
    const ScalarEstimator est = load_scalar_checkpoint(ckpt, &meta);
    const ScalarDataset ds = load_run_scalar_dataset(o);
    const double ms = scalar_mae(est, ds.split(Domain::Source)), mt = scalar_mae(est, ds.split(Domain::Target));
    write_mae(dir / "mae.csv", ms, mt);
    log << fmt::format("eval {}: MAE source {:.4f} target {:.4f}\n", ckpt.filename().string(), ms, mt);
    return;
  }
  Json meta;
  const PoseEstimator est = load_checkpoint(ckpt, &meta);
  const Stage stage = parse_stage(meta.value("stage", std::string("teacher")));
  check_compatible(est, stage_anchors(c, stage), stage_network(c, stage));
  const Dataset ds = load_run_dataset(o);
  const auto [rs, rt] = write_pose_reports(est, ds, dir);
  log << fmt::format("eval {}: recall source {:.1f} target {:.1f}\n", ckpt.filename().string(), rs, rt);
}

void cmd_sweep_threshold(const RunConfig& c, const CommandOptions& o, std::ostream& log) {
  c.validate();
  save_config(c, o);
  const fs::path ckpt = o.checkpoint.value_or(default_checkpoint(o, "teacher"));
  require_file(ckpt, "teacher checkpoint");
  Json meta;
  const PoseEstimator est = load_checkpoint(ckpt, &meta);
  const Stage stage = parse_stage(meta.value("stage", std::string("teacher")));
  check_compatible(est, stage_anchors(c, stage), stage_network(c, stage));
  const Dataset ds = load_run_dataset(o);
  std::vector<PseudoLabel> labels;
  {
    const TrainingAuditScope audit;
    labels = pseudo_label(est, ds.split(Domain::Target));
  }
  const auto grid = default_sweep_grid();
  std::vector<SweepCurve> curves;
  for (std::size_t b = 0; b < 4; ++b) curves.push_back(threshold_sweep(labels, ds, b, grid));
  const fs::path dir = o.out / "sweep" / ckpt.stem();
  write_sweep(dir, curves);
  write_pseudo_labels(dir / "pseudo_labels.csv", labels, 0);
  for (const auto& cv : curves) log << fmt::format("sweep {}: {} points\n", cv.source, cv.points.size());
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return kExitConfig;
  if (dynamic_cast<const DependencyError*>(&e) != nullptr) return kExitDependency;
  if (dynamic_cast<const IoError*>(&e) != nullptr) return kExitIo;
  if (dynamic_cast<const TrainingFailure*>(&e) != nullptr) return kExitTraining;
  if (dynamic_cast<const IncompatibleCheckpoint*>(&e) != nullptr) return kExitIncompatible;
  return kExitError;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Manifold-aware self-training for pose regression under domain shift"};
  app.require_subcommand(1);
  std::string config_path, out = "run", stage, data, checkpoint;
  std::optional<std::uint64_t> seed;
  bool scalar = false;
  app.add_option("--config", config_path, "JSON run configuration (defaults when omitted)");
  app.add_option("--seed", seed, "Overrides the run seed");
  app.add_option("--out", out, "Run directory")->capture_default_str();
  app.add_option("--stage", stage, "teacher | student | baseline-regression | no-ctc | student-no-ctc");
  app.add_flag("--scalar-task", scalar, "Use the scalar regression task");
  app.add_option("--data", data, "Dataset directory (default <out>/data)");
  app.add_option("--checkpoint", checkpoint, "Checkpoint to load");
  auto* gen = app.add_subcommand("gen-data", "Generate source and target datasets")->fallthrough();
  auto* train = app.add_subcommand("train", "Train one stage")->fallthrough();
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on both domains")->fallthrough();
  auto* sweep = app.add_subcommand("sweep-threshold", "Recall among selected pseudo labels versus threshold")
                    ->fallthrough();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    CommandOptions opts;
    opts.out = out;
    opts.scalar_task = scalar;
    if (!data.empty()) opts.data = data;
    if (!checkpoint.empty()) opts.checkpoint = checkpoint;
    if (gen->parsed()) {
      cmd_gen_data(cfg, opts, std::cout);
    } else if (train->parsed()) {
      if (stage.empty()) throw ConfigError("train requires --stage");
      cmd_train(cfg, parse_stage(stage), opts, std::cout);
    } else if (eval->parsed()) {
      cmd_eval(cfg, opts, std::cout);
    } else if (sweep->parsed()) {
      cmd_sweep_threshold(cfg, opts, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitOk;
}

}  // namespace mast
