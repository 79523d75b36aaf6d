#include "mast/objective.hpp"

#include "mast/errors.hpp"
#include "mast/kernels.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mast {

namespace {

constexpr double kLogEps = 1e-12;

double sign(double v) { return (v > 0.0) - (v < 0.0); }

void check_k(int k, std::size_t n, const char* what) {
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw InvalidArgument(std::string("regression loss: ") + what + " neighborhood exceeds the anchor count");
  }
}

}  // namespace

void ObjectiveConfig::validate() const {
  labels.rotation.validate();
  labels.vx.validate();
  labels.vy.validate();
  labels.z.validate();
  if (k_rotation < 1 || k_z < 1 || k_vxvy < 1) throw ConfigError("objective: neighborhoods must be >= 1");
  if (!(ctc_weight >= 0.0)) throw ConfigError("objective: ctc weight must be non-negative");
}

double soft_cross_entropy(std::span<const double> probs, std::span<const double> labels) {
  if (probs.size() != labels.size()) throw ShapeError("soft_cross_entropy: length mismatch");
  double h = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] != 0.0) h -= labels[i] * std::log(probs[i] + kLogEps);
  }
  return h;
}

double point_matching_distance(const Pose& p, const Pose& gt, const ObjectModel& model) {
  if (model.points.empty()) throw InvalidArgument("point_matching_distance: empty model");
  const Mat3 dr = p.rotation - gt.rotation;
  const Vec3 dt = p.translation - gt.translation;
  double sum = 0.0;
  for (const Vec3& x : model.points) sum += (dr * x + dt).lpNorm<1>();
  return sum / static_cast<double>(model.points.size());
}

Mat3 point_matching_rotation_grad(const Mat3& r, const Mat3& r_gt, const ObjectModel& model) {
  const Mat3 dr = r - r_gt;
  Mat3 g = Mat3::Zero();
  for (const Vec3& x : model.points) {
    const Vec3 d = dr * x;
    const Vec3 s(sign(d.x()), sign(d.y()), sign(d.z()));
    g += s * x.transpose();
  }
  return g / static_cast<double>(model.points.size());
}

std::array<double, 6> rot6d_backward(const Rotation6D& r, const Mat3& grad_m) {
  const double n1 = r.a1.norm();
  const Vec3 b1 = r.a1 / n1;
  const double proj = b1.dot(r.a2);
  const Vec3 u2 = r.a2 - proj * b1;
  const double n2 = u2.norm();
  const Vec3 b2 = u2 / n2;
  const Vec3 g1 = grad_m.col(0), g2 = grad_m.col(1), g3 = grad_m.col(2);

  // b3 = b1 x b2
  Vec3 gb1 = g1 + b2.cross(g3);
  const Vec3 gb2 = g2 + g3.cross(b1);
  // b2 = u2 / |u2|
  const Vec3 gu = (gb2 - gb2.dot(b2) * b2) / n2;
  // u2 = a2 - (b1 . a2) b1
  const Vec3 ga2 = gu - b1.dot(gu) * b1;
  gb1 -= proj * gu + gu.dot(b1) * r.a2;
  // b1 = a1 / |a1|
  const Vec3 ga1 = (gb1 - gb1.dot(b1) * b1) / n1;
  return {ga1.x(), ga1.y(), ga1.z(), ga2.x(), ga2.y(), ga2.z()};
}

RotationMatrix predicted_rotation(const HeadOutput& out, const AnchorSet& anchors) {
  const int i = out.argmax(kRotation);
  return rot6d_to_matrix(out.rotation_residual(i)) * anchors.rotations.at(static_cast<std::size_t>(i));
}

LabelTarget resolve_symmetry(const LabelTarget& gt, const HeadOutput& out, const AnchorSet& anchors,
                             const ObjectModel& model) {
  if (!model.is_symmetric()) return gt;
  LabelTarget resolved = gt;
  resolved.pose.rotation = closest_symmetric_rotation(predicted_rotation(out, anchors), gt.pose.rotation, model);
  return resolved;
}

double regression_loss(const HeadOutput& out, const RegressionTarget& target, const AnchorSet& anchors,
                       const ObjectModel& model, const CameraIntrinsics& cam, int k_rotation, int k_z,
                       int k_vxvy, std::vector<std::vector<double>>* grad) {
  if (model.points.empty()) throw InvalidArgument("regression_loss: empty model");
  check_k(k_rotation, anchors.rotations.size(), "rotation");
  check_k(k_z, anchors.bins_z.size(), "depth");
  check_k(k_vxvy, std::min(anchors.bins_vx.size(), anchors.bins_vy.size()), "image-plane");
  const LabelTarget& gt = target.gt;
  const Mat3& r_gt = gt.pose.rotation;
  const double z_gt = gt.pose.translation.z();

  if (grad != nullptr) {
    grad->resize(out.residuals.size());
    for (std::size_t b = 0; b < out.residuals.size(); ++b) (*grad)[b].assign(out.residuals[b].size(), 0.0);
  }

  double loss = 0.0;
  // Rotation anchors: T = [R_reg^i R_a^i | t~].
  for (int i : nearest_anchors(r_gt, anchors.rotations, k_rotation)) {
    const Rotation6D res = out.rotation_residual(i);
    const Mat3& ra = anchors.rotations[static_cast<std::size_t>(i)];
    const Mat3 m = rot6d_to_matrix(res);
    const Mat3 r = m * ra;
    const Mat3 dr = r - r_gt;
    double d = 0.0;
    for (const Vec3& x : model.points) d += (dr * x).lpNorm<1>();
    loss += d / static_cast<double>(model.points.size());
    if (grad != nullptr) {
      const Mat3 g_r = point_matching_rotation_grad(r, r_gt, model);
      const auto g6 = rot6d_backward(res, g_r * ra.transpose());
      auto& dst = (*grad)[kRotation];
      for (std::size_t c = 0; c < 6; ++c) dst[6 * static_cast<std::size_t>(i) + c] += g6[c];
    }
  }

  // Depth anchors: z changes and x, y follow through the pinhole relation.
  const double depth_coef = std::abs(gt.vx) / cam.fx + std::abs(gt.vy) / cam.fy + 1.0;
  for (int i : nearest_anchors(z_gt, anchors.bins_z, k_z)) {
    const auto ui = static_cast<std::size_t>(i);
    const double dz = anchors.bins_z[ui] + out.residuals[kZ][ui] - z_gt;
    loss += std::abs(dz) * depth_coef;
    if (grad != nullptr) (*grad)[kZ][ui] += sign(dz) * depth_coef;
  }

  // Image-plane anchors, paired by neighbor rank across the two axes.
  const auto nx = nearest_anchors(gt.vx, anchors.bins_vx, k_vxvy);
  const auto ny = nearest_anchors(gt.vy, anchors.bins_vy, k_vxvy);
  for (std::size_t r = 0; r < nx.size(); ++r) {
    const auto ix = static_cast<std::size_t>(nx[r]);
    const auto iy = static_cast<std::size_t>(ny[r]);
    const double dx = anchors.bins_vx[ix] + out.residuals[kVx][ix] - gt.vx;
    const double dy = anchors.bins_vy[iy] + out.residuals[kVy][iy] - gt.vy;
    loss += std::abs(dx) * z_gt / cam.fx + std::abs(dy) * z_gt / cam.fy;
    if (grad != nullptr) {
      (*grad)[kVx][ix] += sign(dx) * z_gt / cam.fx;
      (*grad)[kVy][iy] += sign(dy) * z_gt / cam.fy;
    }
  }
  return loss;
}

double scalar_regression_loss(const HeadOutput& out, double target, std::span<const double> bins, int k,
                              std::vector<std::vector<double>>* grad) {
  check_k(k, bins.size(), "scalar");
  if (grad != nullptr) {
    grad->assign(1, std::vector<double>(out.residuals.at(0).size(), 0.0));
  }
  double loss = 0.0;
  for (int i : nearest_anchors(target, bins, k)) {
    const auto ui = static_cast<std::size_t>(i);
    const double d = bins[ui] + out.residuals[0][ui] - target;
    loss += std::abs(d);
    if (grad != nullptr) (*grad)[0][ui] += sign(d);
  }
  return loss;
}

CorrelationGraph batch_feature_graph(std::span<const std::vector<double>> features) {
  CorrelationGraph out;
  out.size = features.size();
  if (features.empty()) return out;
  const std::size_t c = features.front().size();
  std::vector<double> flat;
  flat.reserve(features.size() * c);
  for (const auto& f : features) {
    if (f.size() != c) throw ShapeError("batch_feature_graph: ragged features");
    double n = 0.0;
    for (double v : f) n += v * v;
    if (!(n > 0.0)) throw DegenerateFeature("batch_feature_graph: zero-norm feature");
    flat.insert(flat.end(), f.begin(), f.end());
  }
  out.g.resize(out.size * out.size);
  kernels::omp::cosine_graph(flat, out.g, out.size, c);
  return out;
}

TargetGraph build_target_graph(std::span<const double> bins, double z_min, double z_max) {
  if (!(z_max > z_min)) throw InvalidArgument("build_target_graph: empty range");
  TargetGraph tg;
  tg.size = bins.size();
  for (double z : bins) tg.angles.push_back(z / (z_max - z_min) * (std::numbers::pi / 2.0));
  tg.g0.resize(tg.size * tg.size);
  for (std::size_t i = 0; i < tg.size; ++i) {
    for (std::size_t j = 0; j < tg.size; ++j) {
      tg.g0[i * tg.size + j] = std::cos(std::abs(tg.angles[i] - tg.angles[j]));
    }
  }
  return tg;
}

namespace {

void check_classes(std::span<const int> classes, std::size_t batch, const TargetGraph& tg) {
  if (classes.size() != batch) throw ShapeError("ctc: one class per sample is required");
  for (int c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= tg.size) throw InvalidArgument("ctc: class index out of range");
  }
}

}  // namespace

double ctc_loss(const CorrelationGraph& g, std::span<const int> classes, const TargetGraph& tg) {
  check_classes(classes, g.size, tg);
  double loss = 0.0;
  for (std::size_t i = 0; i < g.size; ++i) {
    for (std::size_t j = 0; j < g.size; ++j) {
      const double d = g(i, j) - tg(static_cast<std::size_t>(classes[i]), static_cast<std::size_t>(classes[j]));
      loss += d * d;
    }
  }
  return loss;
}

int ctc_class(double value, std::span<const double> bins) { return nearest_anchors(value, bins, 1).front(); }

namespace ops {

nn::Var cosine_graph(nn::Graph& g, nn::Var features) {
  const nn::Tensor& f = g.value(features);
  const std::size_t b = f.rows(), c = f.cols();
  std::vector<double> norms(b);
  nn::Tensor unit = f;
  for (std::size_t i = 0; i < b; ++i) {
    double n = 0.0;
    for (double v : f.row(i)) n += v * v;
    n = std::sqrt(n);
    if (!(n > 0.0)) throw DegenerateFeature("cosine_graph: zero-norm feature");
    norms[i] = n;
    for (double& v : unit.row(i)) v /= n;
  }
  nn::Tensor gm = nn::Tensor::matrix(b, b);
  kernels::omp::cosine_graph(f.values(), gm.values(), b, c);
  nn::Tensor g_copy = gm;
  return g.custom({features}, std::move(gm),
                  [unit = std::move(unit), norms = std::move(norms), gv = std::move(g_copy), b, c](
                      const nn::Tensor& dg, std::span<nn::Tensor* const> gi) {
                    // Symmetrized upstream gradient; the diagonal is constant.
                    nn::Tensor s = nn::Tensor::matrix(b, b);
                    for (std::size_t i = 0; i < b; ++i) {
                      for (std::size_t j = 0; j < b; ++j) s(i, j) = i == j ? 0.0 : dg(i, j) + dg(j, i);
                    }
                    nn::Tensor sf = nn::Tensor::matrix(b, c);
                    kernels::omp::matmul(s.values(), unit.values(), sf.values(), b, b, c);
                    for (std::size_t i = 0; i < b; ++i) {
                      double w = 0.0;
                      for (std::size_t j = 0; j < b; ++j) w += s(i, j) * gv(i, j);
                      auto out = gi[0]->row(i);
                      for (std::size_t p = 0; p < c; ++p) out[p] += (sf(i, p) - w * unit(i, p)) / norms[i];
                    }
                  });
}

nn::Var ctc(nn::Graph& g, nn::Var graph, std::vector<int> classes, const TargetGraph& tg) {
  const nn::Tensor& gm = g.value(graph);
  const std::size_t b = gm.rows();
  check_classes(classes, b, tg);
  nn::Tensor diff = nn::Tensor::matrix(b, b);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      diff(i, j) = gm(i, j) - tg(static_cast<std::size_t>(classes[i]), static_cast<std::size_t>(classes[j]));
      loss += diff(i, j) * diff(i, j);
    }
  }
  return g.custom({graph}, nn::Tensor::scalar(loss),
                  [diff = std::move(diff)](const nn::Tensor& up, std::span<nn::Tensor* const> gi) {
                    for (std::size_t i = 0; i < diff.size(); ++i) (*gi[0])[i] += 2.0 * diff[i] * up[0];
                  });
}

nn::Var cross_entropy(nn::Graph& g, nn::Var probs, nn::Tensor labels) {
  const nn::Tensor& p = g.value(probs);
  if (!p.same_shape(labels)) throw ShapeError("cross_entropy: label shape mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) loss += soft_cross_entropy(p.row(i), labels.row(i));
  nn::Tensor dp(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) dp[i] = -labels[i] / (p[i] + kLogEps);
  return g.custom({probs}, nn::Tensor::scalar(loss),
                  [dp = std::move(dp)](const nn::Tensor& up, std::span<nn::Tensor* const> gi) {
                    for (std::size_t i = 0; i < dp.size(); ++i) (*gi[0])[i] += dp[i] * up[0];
                  });
}

namespace {

// Packs per-sample residual gradients into per-branch B x width tensors and
// returns the node; per-sample losses are reduced in fixed order.
nn::Var regression_node(nn::Graph& g, std::span<const nn::Var> residuals, std::span<const double> losses,
                        std::vector<std::vector<std::vector<double>>> grads) {
  double loss = 0.0;
  for (double l : losses) loss += l;
  std::vector<nn::Tensor> packed;
  for (std::size_t b = 0; b < residuals.size(); ++b) {
    nn::Tensor t(g.value(residuals[b]).shape());
    for (std::size_t i = 0; i < grads.size(); ++i) std::copy(grads[i][b].begin(), grads[i][b].end(), t.row(i).begin());
    packed.push_back(std::move(t));
  }
  return g.custom(std::vector<nn::Var>(residuals.begin(), residuals.end()), nn::Tensor::scalar(loss),
                  [packed = std::move(packed)](const nn::Tensor& up, std::span<nn::Tensor* const> gi) {
                    for (std::size_t b = 0; b < packed.size(); ++b) {
                      for (std::size_t i = 0; i < packed[b].size(); ++i) (*gi[b])[i] += packed[b][i] * up[0];
                    }
                  });
}

}  // namespace

nn::Var pose_regression(nn::Graph& g, std::span<const nn::Var> residuals, std::span<const HeadOutput> outs,
                        std::span<const RegressionTarget> targets, const AnchorSet& anchors,
                        const ObjectModel& model, const CameraIntrinsics& cam, const ObjectiveConfig& cfg) {
  const std::vector<const ObjectModel*> models(outs.size(), &model);
  return pose_regression(g, residuals, outs, targets, anchors, models, cam, cfg);
}

nn::Var pose_regression(nn::Graph& g, std::span<const nn::Var> residuals, std::span<const HeadOutput> outs,
                        std::span<const RegressionTarget> targets, const AnchorSet& anchors,
                        std::span<const ObjectModel* const> models, const CameraIntrinsics& cam,
                        const ObjectiveConfig& cfg) {
  if (outs.size() != targets.size() || models.size() != targets.size()) {
    throw ShapeError("pose_regression: batch mismatch");
  }
  const std::size_t batch = outs.size();
  std::vector<double> losses(batch);
  std::vector<std::vector<std::vector<double>>> grads(batch);
  const long n = static_cast<long>(batch);
  detail::parallel_for(n, [&](long i) {
    const auto u = static_cast<std::size_t>(i);
    losses[u] = regression_loss(outs[u], targets[u], anchors, *models[u], cam, cfg.k_rotation, cfg.k_z, cfg.k_vxvy,
                                &grads[u]);
  });
  return regression_node(g, residuals, losses, std::move(grads));
}

nn::Var scalar_regression(nn::Graph& g, nn::Var residuals, std::span<const HeadOutput> outs,
                          std::span<const double> targets, std::span<const double> bins, int k) {
  if (outs.size() != targets.size()) throw ShapeError("scalar_regression: batch mismatch");
  std::vector<double> losses(outs.size());
  std::vector<std::vector<std::vector<double>>> grads(outs.size());
  for (std::size_t i = 0; i < outs.size(); ++i) {
    losses[i] = scalar_regression_loss(outs[i], targets[i], bins, k, &grads[i]);
  }
  const nn::Var r[] = {residuals};
  return regression_node(g, r, losses, std::move(grads));
}

}  // namespace ops

namespace {

nn::Tensor label_tensor(std::span<const std::vector<double>> rows) {
  nn::Tensor t = nn::Tensor::matrix(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), t.row(i).begin());
  return t;
}

// Combines the batch sums into mean(L_cls + L_reg) + w L_ctc.
nn::Var combine(nn::Graph& g, nn::Var cls_sum, nn::Var reg_sum, nn::Var ctc, double ctc_weight,
                std::size_t batch, ObjectiveTerms* terms) {
  const double inv_b = 1.0 / static_cast<double>(batch);
  nn::Var pose = cls_sum.valid() ? g.add(cls_sum, reg_sum) : reg_sum;
  nn::Var total = g.scale(pose, inv_b);
  if (ctc.valid()) total = g.add(total, g.scale(ctc, ctc_weight));
  if (terms != nullptr) {
    terms->cls = cls_sum.valid() ? g.value(cls_sum)[0] * inv_b : 0.0;
    terms->reg = g.value(reg_sum)[0] * inv_b;
    terms->ctc = ctc.valid() ? g.value(ctc)[0] : 0.0;
    terms->total = g.value(total)[0];
  }
  return total;
}

}  // namespace

nn::Var total_objective(nn::Graph& g, const ForwardVars& vars, std::span<const LabelTarget> targets,
                        const AnchorSet& anchors, const ObjectModel& model, const CameraIntrinsics& cam,
                        const ObjectiveConfig& cfg, const NetworkConfig& net, const TargetGraph& tg,
                        ObjectiveTerms* terms) {
  const std::vector<const ObjectModel*> models(targets.size(), &model);
  return total_objective(g, vars, targets, anchors, models, cam, cfg, net, tg, terms);
}

nn::Var total_objective(nn::Graph& g, const ForwardVars& vars, std::span<const LabelTarget> targets,
                        const AnchorSet& anchors, std::span<const ObjectModel* const> models,
                        const CameraIntrinsics& cam, const ObjectiveConfig& cfg, const NetworkConfig& net,
                        const TargetGraph& tg, ObjectiveTerms* terms) {
  const std::size_t batch = targets.size();
  if (batch == 0) throw InvalidArgument("total_objective: empty batch");
  if (models.size() != batch) throw ShapeError("total_objective: one model per sample is required");
  const auto outs = PoseNetwork::extract(g, vars, net);
  if (outs.size() != batch) throw ShapeError("total_objective: batch mismatch");

  std::vector<RegressionTarget> resolved(batch);
  for (std::size_t i = 0; i < batch; ++i) resolved[i].gt = resolve_symmetry(targets[i], outs[i], anchors, *models[i]);

  nn::Var cls_sum;
  if (cfg.use_classification && net.classifier) {
    std::array<std::vector<std::vector<double>>, 4> labels;
    for (const auto& r : resolved) {
      LabelScores s = assign_scores(r.gt, anchors, cfg.labels);
      labels[kRotation].push_back(std::move(s.s_rotation));
      labels[kVx].push_back(std::move(s.s_vx));
      labels[kVy].push_back(std::move(s.s_vy));
      labels[kZ].push_back(std::move(s.s_z));
    }
    for (std::size_t b = 0; b < 4; ++b) {
      nn::Var h = ops::cross_entropy(g, vars.probs[b], label_tensor(labels[b]));
      cls_sum = cls_sum.valid() ? g.add(cls_sum, h) : h;
    }
  }
  nn::Var reg_sum = ops::pose_regression(g, vars.residuals, outs, resolved, anchors, models, cam, cfg);

  nn::Var ctc;
  if (cfg.use_ctc) {
    std::vector<int> classes(batch);
    for (std::size_t i = 0; i < batch; ++i) classes[i] = ctc_class(targets[i].pose.translation.z(), anchors.bins_z);
    ctc = ops::ctc(g, ops::cosine_graph(g, vars.feature), std::move(classes), tg);
  }
  return combine(g, cls_sum, reg_sum, ctc, cfg.ctc_weight, batch, terms);
}

nn::Var total_scalar_objective(nn::Graph& g, const ForwardVars& vars, std::span<const double> targets,
                               std::span<const double> bins, const ScalarObjectiveConfig& cfg,
                               const NetworkConfig& net, const TargetGraph& tg, ObjectiveTerms* terms) {
  const std::size_t batch = targets.size();
  if (batch == 0) throw InvalidArgument("total_scalar_objective: empty batch");
  const auto outs = PoseNetwork::extract(g, vars, net);
  nn::Var cls_sum;
  if (cfg.use_classification && net.classifier) {
    cfg.labels.validate();
    std::vector<std::vector<double>> labels;
    for (double t : targets) labels.push_back(sparse_scores(nearest_anchors(t, bins, cfg.labels.k), bins.size(), cfg.labels));
    cls_sum = ops::cross_entropy(g, vars.probs[0], label_tensor(labels));
  }
  nn::Var reg_sum = ops::scalar_regression(g, vars.residuals[0], outs, targets, bins, cfg.k);
  nn::Var ctc;
  if (cfg.use_ctc) {
    std::vector<int> classes(batch);
    for (std::size_t i = 0; i < batch; ++i) classes[i] = ctc_class(targets[i], bins);
    ctc = ops::ctc(g, ops::cosine_graph(g, vars.feature), std::move(classes), tg);
  }
  return combine(g, cls_sum, reg_sum, ctc, cfg.ctc_weight, batch, terms);
}

}  // namespace mast
