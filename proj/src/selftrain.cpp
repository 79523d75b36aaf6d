#include "mast/selftrain.hpp"

#include "mast/errors.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <unordered_map>

namespace mast {

void AnchorSpec::validate() const {
  if (n_rot < 1 || n_vx < 1 || n_vy < 1 || n_z < 1) throw ConfigError("anchors: counts must be >= 1");
  if (n_rot == 2 || n_rot == 3) throw ConfigError("anchors: rotation anchor count must be 1 or >= 4");
  if (!(v_max > v_min) || !(z_max > z_min)) throw ConfigError("anchors: ranges must be nonempty");
  if (z_min < 0.0) throw ConfigError("anchors: depth range must be nonnegative");
}

AnchorSet AnchorSpec::build() const {
  validate();
  return make_anchor_set(n_rot, n_vx, n_vy, n_z, v_min, v_max, z_min, z_max, seed);
}

PoseEstimator PoseEstimator::create(const AnchorSpec& anchors, NetworkConfig net, const ObjectiveConfig& objective,
                                    const CameraIntrinsics& cam, const std::vector<std::string>& object_ids) {
  objective.validate();
  cam.validate();
  if (object_ids.empty()) throw ConfigError("estimator: no objects");
  PoseEstimator est;
  est.anchor_spec = anchors;
  est.anchors = anchors.build();
  net.branches = pose_branches(est.anchors);
  net.validate();
  est.net = net;
  est.objective = objective;
  est.camera = cam;
  est.target_graph = build_target_graph(est.anchors.bins_z, est.anchors.z_min, est.anchors.z_max);
  for (std::size_t i = 0; i < object_ids.size(); ++i) {
    NetworkConfig c = net;
    c.seed = mix_seed(net.seed, i);
    est.members.push_back({object_ids[i], PoseNetwork(c), nn::Adam()});
  }
  return est;
}

ObjectNet& PoseEstimator::member(const std::string& object_id) {
  for (auto& m : members) {
    if (m.object_id == object_id) return m;
  }
  throw InvalidArgument("estimator: no network for object " + object_id);
}

const ObjectNet& PoseEstimator::member(const std::string& object_id) const {
  return const_cast<PoseEstimator&>(*this).member(object_id);
}

AnchorSpec direct_regression_anchors(const AnchorSpec& base) {
  AnchorSpec a = base;
  a.n_rot = a.n_vx = a.n_vy = a.n_z = 1;
  return a;
}

ObjectiveConfig direct_regression_objective(const ObjectiveConfig& base) {
  ObjectiveConfig o = base;
  const ScoreAssignmentConfig one{1.0, 0.0, 1};
  o.labels = {one, one, one, one};
  o.k_rotation = o.k_z = o.k_vxvy = 1;
  o.use_classification = false;
  o.use_ctc = false;
  return o;
}

Pose predict_pose(const HeadOutput& out, const AnchorSet& anchors, const CameraIntrinsics& cam) {
  const AnchorPicks picks = out.pose_picks();
  PickedResiduals r = out.pose_residuals(picks);
  try {
    (void)rot6d_to_matrix(r.rotation);
  } catch (const DegenerateRotation&) {
    r.rotation = Rotation6D{};
  }
  if (!(anchors.bins_z[static_cast<std::size_t>(picks.z)] + r.z > 0.0)) r.z = 0.0;
  return compose_pose(picks, r, anchors, cam);
}

void SelfTrainConfig::validate() const {
  if (!(tau_start > 0.0 && tau_start <= 1.0) || !(tau_end > 0.0 && tau_end <= 1.0)) {
    throw ConfigError("selftrain: thresholds must lie in (0, 1]");
  }
  if (tau_start < tau_end) throw ConfigError("selftrain: tau_start must be >= tau_end");
  if (rounds < 0) throw ConfigError("selftrain: rounds must be >= 0");
  if (pretrain_epochs < 0 || teacher_epochs < 0 || student_epochs < 0) throw ConfigError("selftrain: epochs must be >= 0");
  if (!(teacher_lr > 0.0) || !(student_lr > 0.0)) throw ConfigError("selftrain: learning rates must be positive");
  if (batch_size < 1) throw ConfigError("selftrain: batch size must be >= 1");
}

namespace {

struct EpochSummary {
  double loss = 0.0;
  double ctc = 0.0;
};

// Learning rate per epoch; cosine decay runs over `total` epochs starting at `offset`.
struct Schedule {
  int epochs = 0;
  double base_lr = 0.0;
  bool cosine = true;
  int offset = 0;
  int total = 0;

  double lr(int e) const {
    if (!cosine || total <= 0) return base_lr;
    const double t = static_cast<double>(offset + e) / static_cast<double>(total);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  }
};

Schedule stage_schedule(int epochs, double lr, const SelfTrainConfig& cfg) {
  return {epochs, lr, cfg.cosine_lr, 0, epochs};
}

using BatchLoss = std::function<nn::Var(nn::Graph&, std::span<const std::size_t>, ObjectiveTerms*)>;

bool grads_finite(PoseNetwork& net) {
  for (auto* p : net.parameters()) {
    if (!p->grad.all_finite()) return false;
  }
  return true;
}

// Shuffled minibatch Adam. The loss and gradients of a step are checked before
// the update, so a failure leaves the parameters at their last finite values.
std::vector<EpochSummary> run_epochs(PoseNetwork& net, nn::Adam& adam, std::size_t n, const Schedule& sched,
                                     int batch_size, std::uint64_t seed, const BatchLoss& loss_fn) {
  std::vector<EpochSummary> out;
  if (n == 0) return out;
  const auto params = net.parameters();
  std::vector<std::size_t> order(n);
  for (int e = 0; e < sched.epochs; ++e) {
    adam.set_lr(sched.lr(e));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(e)));
    std::shuffle(order.begin(), order.end(), rng);
    EpochSummary sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
      const std::size_t len = std::min(static_cast<std::size_t>(batch_size), n - start);
      nn::Graph g;
      ObjectiveTerms terms;
      nn::Var loss;
      try {
        loss = loss_fn(g, std::span<const std::size_t>(order.data() + start, len), &terms);
      } catch (const DegenerateRotation& err) {
        throw TrainingFailure("training diverged in epoch " + std::to_string(e) + ": " + err.what());
      }
      if (!std::isfinite(terms.total)) {
        throw TrainingFailure("training diverged: non-finite loss in epoch " + std::to_string(e));
      }
      net.zero_grad();
      g.backward(loss);
      if (!grads_finite(net)) {
        throw TrainingFailure("training diverged: non-finite gradient in epoch " + std::to_string(e));
      }
      adam.step(params);
      sum.loss += terms.total;
      sum.ctc += terms.ctc;
      ++batches;
    }
    sum.loss /= static_cast<double>(batches);
    sum.ctc /= static_cast<double>(batches);
    out.push_back(sum);
  }
  return out;
}

struct TrainItem {
  const std::vector<double>* obs = nullptr;
  const ObjectModel* model = nullptr;
  LabelTarget target;
};

std::vector<EpochSummary> train_network(const PoseEstimator& est, PoseNetwork& net, nn::Adam& adam,
                                        const std::vector<TrainItem>& items, const Schedule& sched,
                                        int batch_size, std::uint64_t seed) {
  const BatchLoss loss = [&](nn::Graph& g, std::span<const std::size_t> idx, ObjectiveTerms* terms) {
    std::vector<const std::vector<double>*> rows;
    std::vector<const ObjectModel*> models;
    std::vector<LabelTarget> targets;
    for (std::size_t i : idx) {
      rows.push_back(items[i].obs);
      models.push_back(items[i].model);
      targets.push_back(items[i].target);
    }
    const ForwardVars vars = net.forward(g, stack_rows(rows));
    return total_objective(g, vars, targets, est.anchors, models, est.camera, est.objective, est.net,
                           est.target_graph, terms);
  };
  return run_epochs(net, adam, items.size(), sched, batch_size, seed, loss);
}

void append_logs(std::vector<EpochLog>& logs, const std::string& object_id, const std::vector<EpochSummary>& s) {
  for (std::size_t e = 0; e < s.size(); ++e) {
    logs.push_back({object_id, static_cast<int>(e), s[e].loss, s[e].ctc});
  }
}

// Runs the per-object networks over the samples in chunks, returning outputs in input order.
std::vector<HeadOutput> infer_all(const PoseEstimator& est, std::span<const Sample* const> samples) {
  std::vector<HeadOutput> out(samples.size());
  constexpr std::size_t kChunk = 256;
  for (const auto& m : est.members) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i]->object_id == m.object_id) idx.push_back(i);
    }
    for (std::size_t start = 0; start < idx.size(); start += kChunk) {
      const std::size_t len = std::min(kChunk, idx.size() - start);
      std::vector<const std::vector<double>*> rows;
      for (std::size_t j = 0; j < len; ++j) rows.push_back(&samples[idx[start + j]]->observation);
      auto heads = m.net.infer(stack_rows(rows));
      for (std::size_t j = 0; j < len; ++j) out[idx[start + j]] = std::move(heads[j]);
    }
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (out[i].probs.empty()) throw InvalidArgument("estimator: no network for object " + samples[i]->object_id);
  }
  return out;
}

std::unordered_map<std::string, const Sample*> index_samples(const Dataset& ds) {
  std::unordered_map<std::string, const Sample*> m;
  for (const auto& s : ds.samples) m.emplace(s.id, &s);
  return m;
}

}  // namespace

std::vector<EpochLog> train_teacher(PoseEstimator& est, std::span<const Sample* const> source, const Dataset& ds,
                                    const SelfTrainConfig& cfg) {
  cfg.validate();
  const TrainingAuditScope audit;
  std::vector<EpochLog> logs;
  auto items_for = [&](const std::string* object_id) {
    std::vector<TrainItem> items;
    for (const Sample* s : source) {
      if (object_id == nullptr || s->object_id == *object_id) {
        items.push_back({&s->observation, &ds.object(s->object_id).model,
                         LabelTarget::from_pose(s->gt_pose(), est.camera)});
      }
    }
    return items;
  };
  if (cfg.pretrain_epochs > 0) {
    // Shared network over every object, then copied into each member for fine-tuning.
    PoseNetwork shared(est.net);
    nn::Adam adam({.lr = cfg.teacher_lr});
    try {
      const auto s = train_network(est, shared, adam, items_for(nullptr),
                                   stage_schedule(cfg.pretrain_epochs, cfg.teacher_lr, cfg), cfg.batch_size,
                                   mix_seed(cfg.seed, 0x5052));
      append_logs(logs, "*", s);
    } catch (const TrainingFailure&) {
      for (auto& m : est.members) m.net = shared;
      throw;
    }
    for (auto& m : est.members) m.net = shared;
  }
  for (std::size_t k = 0; k < est.members.size(); ++k) {
    auto& m = est.members[k];
    const auto s = train_network(est, m.net, m.adam, items_for(&m.object_id),
                                 stage_schedule(cfg.teacher_epochs, cfg.teacher_lr, cfg), cfg.batch_size,
                                 mix_seed(cfg.seed, k));
    append_logs(logs, m.object_id, s);
  }
  return logs;
}

std::vector<PseudoLabel> pseudo_label(const PoseEstimator& est, std::span<const Sample* const> target) {
  const auto outs = infer_all(est, target);
  std::vector<PseudoLabel> labels(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto& l = labels[i];
    l.sample_id = target[i]->id;
    l.object_id = target[i]->object_id;
    l.pose = predict_pose(outs[i], est.anchors, est.camera);
    for (std::size_t b = 0; b < 4; ++b) l.branch_max[b] = outs[i].max_prob(b);
    l.s_z = outs[i].probs[kZ];
    l.confidence = l.branch_max[kZ];
  }
  return labels;
}

std::vector<PseudoLabel> select_samples(std::span<const PseudoLabel> labels, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("select_samples: tau must lie in [0, 1]");
  std::vector<PseudoLabel> out;
  for (const auto& l : labels) {
    if (l.confidence > tau) out.push_back(l);
  }
  return out;
}

double threshold_schedule(int round, const SelfTrainConfig& cfg) {
  if (round < 0 || round >= cfg.rounds) throw InvalidArgument("threshold_schedule: round out of range");
  if (cfg.rounds == 1) return cfg.tau_start;
  const double t = static_cast<double>(round) / static_cast<double>(cfg.rounds - 1);
  return cfg.tau_start + t * (cfg.tau_end - cfg.tau_start);
}

StudentResult train_student(const PoseEstimator& teacher, std::span<const Sample* const> source,
                            std::span<const Sample* const> target, const Dataset& ds, const SelfTrainConfig& cfg,
                            PoseEstimator* failed) {
  cfg.validate();
  const TrainingAuditScope audit;
  StudentResult res{teacher, {}};
  try {
    for (auto& m : res.student.members) m.adam = nn::Adam({.lr = cfg.student_lr});
    for (int r = 0; r < cfg.rounds; ++r) {
      const PoseEstimator& annotator = r == 0 || !cfg.reannotate ? teacher : res.student;
      StudentRound round;
      round.annotations = pseudo_label(annotator, target);
      round.stats.round = r;
      round.stats.tau = threshold_schedule(r, cfg);
      round.stats.candidates = target.size();
      round.selected = select_samples(round.annotations, round.stats.tau);
      round.stats.selected = round.selected.size();

      std::unordered_map<std::string, const Sample*> by_id;
      for (const Sample* s : target) by_id.emplace(s->id, s);
      double loss = 0.0, ctc = 0.0;
      for (std::size_t k = 0; k < res.student.members.size(); ++k) {
        auto& m = res.student.members[k];
        std::vector<TrainItem> items;
        for (const Sample* s : source) {
          if (s->object_id == m.object_id) {
            items.push_back({&s->observation, &ds.object(s->object_id).model,
                             LabelTarget::from_pose(s->gt_pose(), res.student.camera)});
          }
        }
        for (const auto& l : round.selected) {
          if (l.object_id == m.object_id) {
            items.push_back({&by_id.at(l.sample_id)->observation, &ds.object(l.object_id).model,
                             LabelTarget::from_pose(l.pose, res.student.camera)});
          }
        }
        const Schedule sched{cfg.student_epochs, cfg.student_lr, cfg.cosine_lr, r * cfg.student_epochs,
                             cfg.rounds * cfg.student_epochs};
        const std::uint64_t seed = mix_seed(mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(r)), k);
        const auto s = train_network(res.student, m.net, m.adam, items, sched, cfg.batch_size, seed);
        if (!s.empty()) {
          loss += s.back().loss;
          ctc += s.back().ctc;
        }
      }
      const double members = static_cast<double>(res.student.members.size());
      round.stats.loss = loss / members;
      round.stats.ctc = ctc / members;
      res.rounds.push_back(std::move(round));
    }
  } catch (const TrainingFailure&) {
    if (failed != nullptr) *failed = res.student;
    throw;
  }
  return res;
}

std::vector<EvalRecord> evaluate_estimator(const PoseEstimator& est, std::span<const Sample* const> samples,
                                           const Dataset& ds) {
  const auto outs = infer_all(est, samples);
  std::vector<EvalRecord> records(samples.size());
  const long n = static_cast<long>(samples.size());
  detail::parallel_for(n, [&](long li) {
    const auto i = static_cast<std::size_t>(li);
    const Sample* s = samples[i];
    const Pose p = predict_pose(outs[i], est.anchors, est.camera);
    records[i] = evaluate_pose(s->id, s->object_id, p, s->gt_pose(), ds.object(s->object_id).model);
  });
  return records;
}

std::optional<double> pseudo_label_recall(std::span<const PseudoLabel> labels, const Dataset& ds) {
  if (labels.empty()) return std::nullopt;
  const auto by_id = index_samples(ds);
  std::vector<EvalRecord> records;
  for (const auto& l : labels) {
    const auto it = by_id.find(l.sample_id);
    if (it == by_id.end()) throw InvalidArgument("pseudo label for unknown sample " + l.sample_id);
    records.push_back(evaluate_pose(l.sample_id, l.object_id, l.pose, it->second->gt_pose(),
                                    ds.object(l.object_id).model));
  }
  return average_recall(records);
}

void fill_selected_recall(std::vector<StudentRound>& rounds, const Dataset& ds) {
  for (auto& r : rounds) r.stats.selected_recall = pseudo_label_recall(r.selected, ds);
}

SweepCurve threshold_sweep(std::span<const PseudoLabel> labels, const Dataset& ds, std::size_t branch,
                           std::span<const double> taus, std::size_t min_selected) {
  if (branch > 3) throw InvalidArgument("threshold_sweep: branch index out of range");
  SweepCurve curve{branch_name(branch), {}};
  for (double tau : taus) {
    std::vector<PseudoLabel> sel;
    for (const auto& l : labels) {
      if (l.branch_max[branch] > tau) sel.push_back(l);
    }
    if (sel.size() < min_selected || sel.empty()) continue;
    curve.points.push_back({tau, sel.size(), *pseudo_label_recall(sel, ds)});
  }
  return curve;
}

std::vector<double> default_sweep_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(0.05 * i);
  return g;
}

std::string branch_name(std::size_t branch) {
  static const char* names[] = {"S_R", "S_vx", "S_vy", "S_z"};
  if (branch > 3) throw InvalidArgument("branch_name: index out of range");
  return names[branch];
}

ScalarEstimator ScalarEstimator::create(int n_bins, bool direct, bool use_ctc, NetworkConfig net) {
  if (!direct && n_bins < 7) throw ConfigError("scalar estimator: at least 7 bins are required");
  ScalarEstimator est;
  est.bins = direct ? std::vector<double>{0.5 * (kScalarMin + kScalarMax)}
                    : generate_translation_bins(kScalarMin, kScalarMax, n_bins);
  net.branches = scalar_branches(est.bins);
  if (direct) net.branches[0].residual_scale = {kScalarMax - kScalarMin};
  net.classifier = !direct;
  est.net = net;
  if (direct) {
    est.objective.labels = {1.0, 0.0, 1};
    est.objective.k = 1;
    est.objective.use_classification = false;
    est.objective.use_ctc = false;
  } else {
    est.objective.use_ctc = use_ctc;
  }
  est.target_graph = build_target_graph(est.bins, est.lo, est.hi);
  est.network = PoseNetwork(net);
  return est;
}

std::vector<HeadOutput> ScalarEstimator::infer(std::span<const ScalarSample* const> samples) const {
  std::vector<HeadOutput> out;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, samples.size() - start);
    std::vector<const std::vector<double>*> rows;
    for (std::size_t j = 0; j < len; ++j) rows.push_back(&samples[start + j]->observation);
    auto heads = network.infer(stack_rows(rows));
    for (auto& h : heads) out.push_back(std::move(h));
  }
  return out;
}

double ScalarEstimator::predict(const HeadOutput& out) const {
  const int a = out.argmax(0);
  return bins[static_cast<std::size_t>(a)] + out.residuals[0][static_cast<std::size_t>(a)];
}

std::vector<EpochLog> train_scalar(ScalarEstimator& est, std::span<const ScalarSample* const> samples,
                                   std::span<const double> targets, int epochs, double lr, int batch_size,
                                   std::uint64_t seed, bool cosine) {
  return train_scalar(est, samples, targets, epochs, lr, batch_size, seed, cosine, 0, epochs);
}

std::vector<EpochLog> train_scalar(ScalarEstimator& est, std::span<const ScalarSample* const> samples,
                                   std::span<const double> targets, int epochs, double lr, int batch_size,
                                   std::uint64_t seed, bool cosine, int offset, int total) {
  if (samples.size() != targets.size()) throw ShapeError("train_scalar: sample and target counts differ");
  const BatchLoss loss = [&](nn::Graph& g, std::span<const std::size_t> idx, ObjectiveTerms* terms) {
    std::vector<const std::vector<double>*> rows;
    std::vector<double> t;
    for (std::size_t i : idx) {
      rows.push_back(&samples[i]->observation);
      t.push_back(targets[i]);
    }
    const ForwardVars vars = est.network.forward(g, stack_rows(rows));
    return total_scalar_objective(g, vars, t, est.bins, est.objective, est.net, est.target_graph, terms);
  };
  std::vector<EpochLog> logs;
  const Schedule sched{epochs, lr, cosine, offset, total};
  append_logs(logs, "scalar", run_epochs(est.network, est.adam, samples.size(), sched, batch_size, seed, loss));
  return logs;
}

std::vector<RoundStats> self_train_scalar(ScalarEstimator& est, std::span<const ScalarSample* const> source,
                                          std::span<const ScalarSample* const> target, const SelfTrainConfig& cfg) {
  cfg.validate();
  const TrainingAuditScope audit;
  const ScalarEstimator teacher = est;
  est.adam = nn::Adam({.lr = cfg.student_lr});
  std::vector<double> source_labels;
  for (const auto* s : source) source_labels.push_back(s->label());
  std::vector<RoundStats> stats;
  for (int r = 0; r < cfg.rounds; ++r) {
    const ScalarEstimator& annotator = r == 0 || !cfg.reannotate ? teacher : est;
    const auto outs = annotator.infer(target);
    RoundStats st;
    st.round = r;
    st.tau = threshold_schedule(r, cfg);
    st.candidates = target.size();
    std::vector<const ScalarSample*> rows(source.begin(), source.end());
    std::vector<double> labels = source_labels;
    for (std::size_t i = 0; i < target.size(); ++i) {
      if (outs[i].max_prob(0) > st.tau) {
        rows.push_back(target[i]);
        labels.push_back(annotator.predict(outs[i]));
        ++st.selected;
      }
    }
    const auto logs = train_scalar(est, rows, labels, cfg.student_epochs, cfg.student_lr, cfg.batch_size,
                                   mix_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(r)), cfg.cosine_lr,
                                   r * cfg.student_epochs, cfg.rounds * cfg.student_epochs);
    if (!logs.empty()) {
      st.loss = logs.back().loss;
      st.ctc = logs.back().ctc;
    }
    stats.push_back(st);
  }
  return stats;
}

double scalar_mae(const ScalarEstimator& est, std::span<const ScalarSample* const> samples) {
  if (samples.empty()) throw InvalidArgument("scalar_mae: empty sample list");
  const auto outs = est.infer(samples);
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) sum += std::abs(est.predict(outs[i]) - samples[i]->label());
  return sum / static_cast<double>(samples.size());
}

}  // namespace mast
