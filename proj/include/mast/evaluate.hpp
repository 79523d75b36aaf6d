#pragma once

#include "mast/geometry.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mast {

struct EvalRecord {
  std::string sample_id;
  std::string object_id;
  double add = 0.0;
  double add_s = 0.0;
  bool hit = false;
};

// Mean distance between corresponding model points under the two poses.
double add_metric(const Pose& p, const Pose& gt, const ObjectModel& model);
// Mean distance from each predicted point to the closest ground-truth point; exact O(n^2).
double add_s_metric(const Pose& p, const Pose& gt, const ObjectModel& model);

// ADD-S decides the hit for symmetric models, ADD otherwise; threshold 0.1 diameter.
EvalRecord evaluate_pose(const std::string& sample_id, const std::string& object_id, const Pose& p,
                         const Pose& gt, const ObjectModel& model, double fraction = 0.1);

// 100 * hits / total.
double average_recall(std::span<const EvalRecord> records);

struct RecallRow {
  std::string object_id;
  std::size_t count = 0;
  double recall = 0.0;
};

// Per-object recalls in first-seen order of object ids, followed by a "mean" row
// holding the unweighted mean of the per-object recalls.
std::vector<RecallRow> recall_table(std::span<const EvalRecord> records);

struct RoundStats {
  int round = 0;
  double tau = 0.0;
  std::size_t candidates = 0;
  std::size_t selected = 0;
  std::optional<double> selected_recall;  // absent when nothing was selected
  double loss = 0.0;
  double ctc = 0.0;
};

struct SweepPoint {
  double tau = 0.0;
  std::size_t selected = 0;
  double recall = 0.0;
};

struct SweepCurve {
  std::string source;  // which classifier branch supplied the confidence
  std::vector<SweepPoint> points;
};

// Delimited-text writers. Numbers are printed in shortest round-trip form so
// identical runs produce identical bytes. Throw IoError on failure.
void write_recall_table(const std::filesystem::path& path, std::span<const RecallRow> rows);
void write_records(const std::filesystem::path& path, std::span<const EvalRecord> records);
void write_round_stats(const std::filesystem::path& path, std::span<const RoundStats> rows);
// One two-column (tau, recall) file per curve plus a combined long-format table.
void write_sweep(const std::filesystem::path& dir, std::span<const SweepCurve> curves);

// Text of a file, for tests and determinism checks.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace mast
