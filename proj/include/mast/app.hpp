#pragma once

// Run configuration and the command implementations behind the command-line tool.

#include "mast/io.hpp"
#include "mast/selftrain.hpp"
#include "mast/synthbench.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mast {

// Domain settings as written in a config: the offset is generated from a
// magnitude over a channel range instead of being listed.
struct DomainSpec {
  double offset = 0.0;
  int offset_begin = ObservationLayout::kNuisanceBegin;
  int offset_count = ObservationLayout::kNuisanceChannels;
  double noise = 0.0;
  double dropout = 0.0;
  double depth_noise = 0.0;
  double offset_spread = 0.0;

  DomainConfig build(std::uint64_t seed) const;
};

// Offset on the nuisance channels plus Gaussian noise.
inline DomainSpec domain_spec(double offset, double noise) {
  DomainSpec d;
  d.offset = offset;
  d.noise = noise;
  return d;
}

// Desk benchmark settings: a light correlation term and shared pretraining.
inline ObjectiveConfig desk_objective() {
  ObjectiveConfig o;
  o.ctc_weight = 0.01;
  return o;
}

inline SelfTrainConfig desk_selftrain() {
  SelfTrainConfig s;
  s.pretrain_epochs = 60;
  return s;
}

struct ObjectSpec {
  std::string id;
  ObjectKind kind = ObjectKind::Blob;
  std::uint64_t seed = 0;
};

struct DataConfig {
  int n_source = 2000;
  int n_target = 1000;
  int n_points = 128;
  std::vector<ObjectSpec> objects{{"blob", ObjectKind::Blob, 11},
                                  {"cylinder", ObjectKind::Cylinder, 12},
                                  {"box", ObjectKind::Box, 13}};
  PoseRange range;
  DomainSpec source = domain_spec(0.0, 0.01);
  DomainSpec target = domain_spec(0.1, 0.02);
  std::uint64_t embedding_seed = 7;
};

struct ScalarTaskConfig {
  int n_source = 2000;
  int n_target = 1000;
  int bins = 20;
  int epochs = 60;
  double lr = 1e-3;
  double ctc_weight = 0.001;
  DomainSpec source = domain_spec(0.0, 0.0);
  DomainSpec target = domain_spec(0.1, 0.005);
  std::uint64_t embedding_seed = 11;
};

struct RunConfig {
  std::uint64_t seed = 1;  // every other seed is derived from this one
  CameraIntrinsics camera;
  DataConfig data;
  ScalarTaskConfig scalar;
  AnchorSpec anchors;
  NetworkConfig network;
  ObjectiveConfig objective = desk_objective();
  SelfTrainConfig selftrain = desk_selftrain();

  void validate() const;
};

Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

enum class Stage { Teacher, Student, BaselineRegression, NoCtc, StudentNoCtc };
Stage parse_stage(const std::string& s);
std::string to_string(Stage s);
bool is_student(Stage s);
// Stage whose checkpoint initializes the given student stage.
Stage teacher_of(Stage s);

// Stage-specific layout: baseline-regression uses single anchors without the
// classifier; the no-ctc variants disable L_ctc.
AnchorSpec stage_anchors(const RunConfig& c, Stage s);
NetworkConfig stage_network(const RunConfig& c, Stage s);
ObjectiveConfig stage_objective(const RunConfig& c, Stage s);
SelfTrainConfig stage_selftrain(const RunConfig& c);

Dataset generate_dataset(const RunConfig& c);
ScalarDataset generate_scalar_dataset(const RunConfig& c);

struct StageResult {
  PoseEstimator estimator;
  std::vector<EpochLog> logs;
  std::vector<StudentRound> rounds;
};

// Trains one stage in memory. Student stages require the teacher estimator.
// On TrainingFailure the last finite estimator is copied into `failed` when given.
StageResult run_stage(const RunConfig& c, Stage s, const Dataset& ds, const PoseEstimator* teacher = nullptr,
                      PoseEstimator* failed = nullptr);

struct ScalarStageResult {
  ScalarEstimator estimator;
  std::vector<EpochLog> logs;
  std::vector<RoundStats> rounds;
};

// Scalar-task counterpart of run_stage.
ScalarStageResult run_scalar_stage(const RunConfig& c, Stage s, const ScalarDataset& ds,
                                   const ScalarEstimator* teacher = nullptr);

// Commands. Each writes into `out` and returns normally or throws a mast::Error.
struct CommandOptions {
  std::filesystem::path out = "run";
  std::optional<std::filesystem::path> data;        // dataset directory; defaults to <out>/data
  std::optional<std::filesystem::path> checkpoint;  // explicit checkpoint
  bool scalar_task = false;
};

void cmd_gen_data(const RunConfig& c, const CommandOptions& o, std::ostream& log);
void cmd_train(const RunConfig& c, Stage s, const CommandOptions& o, std::ostream& log);
void cmd_eval(const RunConfig& c, const CommandOptions& o, std::ostream& log);
void cmd_sweep_threshold(const RunConfig& c, const CommandOptions& o, std::ostream& log);

// Exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitConfig = 2,
  kExitDependency = 3,
  kExitIo = 4,
  kExitTraining = 5,
  kExitIncompatible = 6,
};

int exit_code_for(const std::exception& e);

// Full command-line entry point.
int run_cli(int argc, char** argv);

}  // namespace mast
