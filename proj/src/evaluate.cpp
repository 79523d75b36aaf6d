#include "mast/evaluate.hpp"

#include "mast/errors.hpp"
#include "mast/kernels.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>

namespace mast {

namespace {

std::vector<double> transformed_flat(const Pose& p, const ObjectModel& model) {
  std::vector<double> out;
  out.reserve(3 * model.points.size());
  for (const Vec3& x : model.points) {
    const Vec3 y = p.rotation * x + p.translation;
    out.insert(out.end(), {y.x(), y.y(), y.z()});
  }
  return out;
}

void require_points(const ObjectModel& model, const char* what) {
  if (model.points.empty()) throw InvalidArgument(std::string(what) + ": empty model");
}

}  // namespace

double add_metric(const Pose& p, const Pose& gt, const ObjectModel& model) {
  require_points(model, "add_metric");
  double sum = 0.0;
  for (const Vec3& x : model.points) {
    sum += ((p.rotation * x + p.translation) - (gt.rotation * x + gt.translation)).norm();
  }
  return sum / static_cast<double>(model.points.size());
}

double add_s_metric(const Pose& p, const Pose& gt, const ObjectModel& model) {
  require_points(model, "add_s_metric");
  const auto a = transformed_flat(p, model);
  const auto b = transformed_flat(gt, model);
  return kernels::omp::mean_closest_distance(a, b, model.points.size(), model.points.size());
}

EvalRecord evaluate_pose(const std::string& sample_id, const std::string& object_id, const Pose& p,
                         const Pose& gt, const ObjectModel& model, double fraction) {
  EvalRecord r;
  r.sample_id = sample_id;
  r.object_id = object_id;
  r.add = add_metric(p, gt, model);
  r.add_s = add_s_metric(p, gt, model);
  const double d = model.is_symmetric() ? r.add_s : r.add;
  r.hit = d < fraction * model.diameter;
  return r;
}

double average_recall(std::span<const EvalRecord> records) {
  if (records.empty()) throw InvalidArgument("average_recall: no records");
  std::size_t hits = 0;
  for (const auto& r : records) hits += r.hit ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(records.size());
}

std::vector<RecallRow> recall_table(std::span<const EvalRecord> records) {
  std::vector<RecallRow> rows;
  std::vector<std::size_t> hits;
  for (const auto& r : records) {
    std::size_t k = 0;
    while (k < rows.size() && rows[k].object_id != r.object_id) ++k;
    if (k == rows.size()) {
      rows.push_back({r.object_id, 0, 0.0});
      hits.push_back(0);
    }
    ++rows[k].count;
    hits[k] += r.hit ? 1 : 0;
  }
  double mean = 0.0;
  std::size_t total = 0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    rows[k].recall = 100.0 * static_cast<double>(hits[k]) / static_cast<double>(rows[k].count);
    mean += rows[k].recall;
    total += rows[k].count;
  }
  if (!rows.empty()) rows.push_back({"mean", total, mean / static_cast<double>(rows.size())});
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_recall_table(const std::filesystem::path& path, std::span<const RecallRow> rows) {
  std::string s = "object,count,recall\n";
  for (const auto& r : rows) s += fmt::format("{},{},{}\n", r.object_id, r.count, r.recall);
  write_text(path, s);
}

void write_records(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  std::string s = "sample_id,object,add,add_s,hit\n";
  for (const auto& r : records) {
    s += fmt::format("{},{},{},{},{}\n", r.sample_id, r.object_id, r.add, r.add_s, r.hit ? 1 : 0);
  }
  write_text(path, s);
}

void write_round_stats(const std::filesystem::path& path, std::span<const RoundStats> rows) {
  std::string s = "round,tau,candidates,selected,selected_recall,loss,ctc\n";
  for (const auto& r : rows) {
    s += fmt::format("{},{},{},{},{},{},{}\n", r.round, r.tau, r.candidates, r.selected,
                     r.selected_recall ? fmt::format("{}", *r.selected_recall) : std::string("NA"), r.loss,
                     r.ctc);
  }
  write_text(path, s);
}

void write_sweep(const std::filesystem::path& dir, std::span<const SweepCurve> curves) {
  std::string all = "source,tau,selected,recall\n";
  for (const auto& c : curves) {
    std::string s = "tau,recall\n";
    for (const auto& p : c.points) {
      s += fmt::format("{},{}\n", p.tau, p.recall);
      all += fmt::format("{},{},{},{}\n", c.source, p.tau, p.selected, p.recall);
    }
    write_text(dir / ("sweep_" + c.source + ".csv"), s);
  }
  write_text(dir / "sweep.csv", all);
}

}  // namespace mast
