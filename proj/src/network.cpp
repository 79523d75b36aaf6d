#include "mast/network.hpp"

#include "mast/errors.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mast {

void NetworkConfig::validate() const {
  if (input_dim < 1 || feature_dim < 1 || encoder_layers < 1 || head_hidden < 1) {
    throw ConfigError("network: layer sizes must be positive");
  }
  if (branches.empty()) throw ConfigError("network: at least one branch is required");
  for (const auto& b : branches) {
    if (b.anchors < 1 || b.width < 1) throw ConfigError("network: branch sizes must be positive");
    if (b.residual_scale.size() != static_cast<std::size_t>(b.width) ||
        b.residual_offset.size() != static_cast<std::size_t>(b.width)) {
      throw ConfigError("network: residual scale/offset must match the branch width");
    }
    if (!classifier && b.anchors != 1) {
      throw ConfigError("network: direct regression requires single-anchor branches");
    }
  }
}

std::vector<BranchSpec> pose_branches(const AnchorSet& anchors) {
  const auto n = [](const auto& v) { return static_cast<int>(v.size()); };
  return {
      {"rotation", n(anchors.rotations), 6, std::vector<double>(6, 1.0), {1.0, 0.0, 0.0, 0.0, 1.0, 0.0}},
      {"vx", n(anchors.bins_vx), 1, {anchors.vx_spacing()}, {0.0}},
      {"vy", n(anchors.bins_vy), 1, {anchors.vy_spacing()}, {0.0}},
      {"z", n(anchors.bins_z), 1, {anchors.z_spacing()}, {0.0}},
  };
}

std::vector<BranchSpec> scalar_branches(std::span<const double> bins) {
  const double spacing = bins.size() > 1 ? bins[1] - bins[0] : 1.0;
  return {{"scalar", static_cast<int>(bins.size()), 1, {spacing}, {0.0}}};
}

int HeadOutput::argmax(std::size_t branch) const {
  const auto& p = probs.at(branch);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

double HeadOutput::max_prob(std::size_t branch) const {
  const auto& p = probs.at(branch);
  return *std::max_element(p.begin(), p.end());
}

Rotation6D HeadOutput::rotation_residual(int anchor) const {
  const auto& r = residuals.at(kRotation);
  return Rotation6D::from_array(std::span<const double, 6>(r.data() + 6 * static_cast<std::size_t>(anchor), 6));
}

AnchorPicks HeadOutput::pose_picks() const {
  return {argmax(kRotation), argmax(kVx), argmax(kVy), argmax(kZ)};
}

PickedResiduals HeadOutput::pose_residuals(const AnchorPicks& picks) const {
  PickedResiduals r;
  r.rotation = rotation_residual(picks.rotation);
  r.vx = residuals.at(kVx).at(static_cast<std::size_t>(picks.vx));
  r.vy = residuals.at(kVy).at(static_cast<std::size_t>(picks.vy));
  r.z = residuals.at(kZ).at(static_cast<std::size_t>(picks.z));
  return r;
}

namespace {

Linear make_linear(const std::string& name, int in, int out, bool zero, std::mt19937_64& rng) {
  nn::Tensor w = nn::Tensor::matrix(static_cast<std::size_t>(in), static_cast<std::size_t>(out));
  if (!zero) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / in));
    for (double& v : w.values()) v = dist(rng);
  }
  return {nn::Parameter(name + ".weight", std::move(w)),
          nn::Parameter(name + ".bias", nn::Tensor::matrix(1, static_cast<std::size_t>(out)))};
}

}  // namespace

PoseNetwork::PoseNetwork(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  int in = cfg_.input_dim;
  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    encoder_.push_back(make_linear("encoder." + std::to_string(l), in, cfg_.feature_dim, false, rng));
    in = cfg_.feature_dim;
  }
  for (const auto& b : cfg_.branches) {
    if (cfg_.classifier) {
      cls_hidden_.push_back(make_linear("cls." + b.name + ".hidden", cfg_.feature_dim, cfg_.head_hidden, false, rng));
      cls_out_.push_back(make_linear("cls." + b.name + ".out", cfg_.head_hidden, b.anchors, cfg_.zero_init_heads, rng));
    }
    reg_hidden_.push_back(make_linear("reg." + b.name + ".hidden", cfg_.feature_dim, cfg_.head_hidden, false, rng));
    reg_out_.push_back(make_linear("reg." + b.name + ".out", cfg_.head_hidden, b.anchors * b.width,
                                   cfg_.zero_init_heads, rng));
  }
}

nn::Var PoseNetwork::apply(nn::Graph& g, nn::Var x, Linear& layer) {
  return g.linear(x, g.parameter(layer.weight), g.parameter(layer.bias));
}

ForwardVars PoseNetwork::forward(nn::Graph& g, const nn::Tensor& obs) {
  if (obs.shape().size() != 2 || obs.cols() != static_cast<std::size_t>(cfg_.input_dim)) {
    throw ShapeError("forward: observation dimension does not match the encoder input");
  }
  ForwardVars out;
  nn::Var h = g.constant(obs);
  for (auto& layer : encoder_) h = g.silu(apply(g, h, layer));
  out.feature = h;
  for (std::size_t b = 0; b < cfg_.branches.size(); ++b) {
    const auto& spec = cfg_.branches[b];
    if (cfg_.classifier) {
      nn::Var c = g.silu(apply(g, h, cls_hidden_[b]));
      out.probs.push_back(g.softmax_rows(apply(g, c, cls_out_[b])));
    } else {
      out.probs.push_back(nn::Var{});
    }
    nn::Var r = apply(g, g.silu(apply(g, h, reg_hidden_[b])), reg_out_[b]);
    std::vector<double> scale, offset;
    for (int a = 0; a < spec.anchors; ++a) {
      scale.insert(scale.end(), spec.residual_scale.begin(), spec.residual_scale.end());
      offset.insert(offset.end(), spec.residual_offset.begin(), spec.residual_offset.end());
    }
    out.residuals.push_back(g.column_affine(r, std::move(scale), std::move(offset)));
  }
  return out;
}

std::vector<HeadOutput> PoseNetwork::extract(const nn::Graph& g, const ForwardVars& vars,
                                             const NetworkConfig& cfg) {
  const nn::Tensor& f = g.value(vars.feature);
  std::vector<HeadOutput> outs(f.rows());
  for (std::size_t i = 0; i < f.rows(); ++i) {
    auto& o = outs[i];
    auto fr = f.row(i);
    o.feature.assign(fr.begin(), fr.end());
    for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
      if (vars.probs[b].valid()) {
        auto pr = g.value(vars.probs[b]).row(i);
        o.probs.emplace_back(pr.begin(), pr.end());
      } else {
        o.probs.emplace_back(static_cast<std::size_t>(cfg.branches[b].anchors), 1.0);
      }
      auto rr = g.value(vars.residuals[b]).row(i);
      o.residuals.emplace_back(rr.begin(), rr.end());
    }
  }
  return outs;
}

std::vector<HeadOutput> PoseNetwork::infer(const nn::Tensor& obs) const {
  // Forward only reads parameter values; the graph copies them into its leaves.
  nn::Graph g;
  auto& self = const_cast<PoseNetwork&>(*this);
  const ForwardVars vars = self.forward(g, obs);
  return extract(g, vars, cfg_);
}

std::vector<nn::Parameter*> PoseNetwork::parameters() {
  std::vector<nn::Parameter*> out;
  auto add = [&](std::vector<Linear>& layers) {
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  };
  add(encoder_);
  add(cls_hidden_);
  add(cls_out_);
  add(reg_hidden_);
  add(reg_out_);
  return out;
}

std::vector<const nn::Parameter*> PoseNetwork::parameters() const {
  auto ps = const_cast<PoseNetwork&>(*this).parameters();
  return {ps.begin(), ps.end()};
}

void PoseNetwork::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

nn::Tensor stack_rows(std::span<const std::vector<double>* const> rows) {
  if (rows.empty()) throw InvalidArgument("stack_rows: empty batch");
  const std::size_t dim = rows.front()->size();
  nn::Tensor t = nn::Tensor::matrix(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i]->size() != dim) throw ShapeError("stack_rows: ragged observations");
    std::copy(rows[i]->begin(), rows[i]->end(), t.row(i).begin());
  }
  return t;
}

}  // namespace mast
