#include "mast/tinynet.hpp"

#include "mast/errors.hpp"
#include "mast/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mast::nn {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  const std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1},
                                        std::multiplies<>());
  data_.assign(shape_.empty() ? 0 : n, fill);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Parameter::Parameter(std::string n, Tensor init)
    : name(std::move(n)),
      value(std::move(init)),
      grad(value.shape()),
      m(value.shape()),
      v(value.shape()) {}

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw InvalidArgument("graph: variable does not belong to this graph");
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const { return node(v).value; }
const Tensor& Graph::grad(Var v) const { return node(v).grad; }

Var Graph::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  return push(std::move(n));
}

Var Graph::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  return push(std::move(n));
}

Var Graph::custom(std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (Var v : inputs) {
    node(v);
    n.inputs.push_back(v.id);
  }
  n.backward = std::move(backward);
  return push(std::move(n));
}

Var Graph::linear(Var x, Var w, Var b) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  const std::size_t batch = xv.rows(), in = xv.cols(), out = wv.cols();
  if (wv.rows() != in || bv.size() != out) throw ShapeError("linear: shape mismatch");
  Tensor y = Tensor::matrix(batch, out);
  kernels::omp::matmul(xv.values(), wv.values(), y.values(), batch, in, out);
  for (std::size_t i = 0; i < batch; ++i) {
    auto r = y.row(i);
    for (std::size_t j = 0; j < out; ++j) r[j] += bv[j];
  }
  // Inputs are captured by value; the tape never mutates recorded values.
  Tensor x_copy = xv;
  Tensor w_copy = wv;
  return custom({x, w, b}, std::move(y),
                [x_copy = std::move(x_copy), w_copy = std::move(w_copy), batch, in, out](
                    const Tensor& g, std::span<Tensor* const> gi) {
                  // dX += G W^T ; dW += X^T G ; db += column sums of G.
                  kernels::omp::matmul_nt_acc(g.values(), w_copy.values(), gi[0]->values(), batch, out, in);
                  kernels::omp::matmul_tn_acc(x_copy.values(), g.values(), gi[1]->values(), in, batch, out);
                  auto db = gi[2]->values();
                  for (std::size_t i = 0; i < batch; ++i) {
                    for (std::size_t j = 0; j < out; ++j) db[j] += g(i, j);
                  }
                });
}

Var Graph::silu(Var x) {
  const Tensor& xv = value(x);
  Tensor y(xv.shape());
  Tensor dydx(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-xv[i]));
    y[i] = xv[i] * s;
    dydx[i] = s * (1.0 + xv[i] * (1.0 - s));
  }
  return custom({x}, std::move(y), [dydx = std::move(dydx)](const Tensor& g, std::span<Tensor* const> gi) {
    auto out = gi[0]->values();
    for (std::size_t i = 0; i < g.size(); ++i) out[i] += g[i] * dydx[i];
  });
}

Var Graph::softmax_rows(Var x) {
  const Tensor& xv = value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    auto in = xv.row(i);
    auto out = y.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - mx);
      z += out[j];
    }
    for (double& v : out) v /= z;
  }
  Tensor y_copy = y;
  return custom({x}, std::move(y), [p = std::move(y_copy)](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < p.rows(); ++i) {
      auto pr = p.row(i);
      auto gr = g.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < pr.size(); ++j) dot += gr[j] * pr[j];
      auto out = gi[0]->row(i);
      for (std::size_t j = 0; j < pr.size(); ++j) out[j] += pr[j] * (gr[j] - dot);
    }
  });
}

Var Graph::column_affine(Var x, std::vector<double> scale, std::vector<double> offset) {
  const Tensor& xv = value(x);
  const std::size_t c = xv.cols();
  if (scale.size() != c || offset.size() != c) throw ShapeError("column_affine: shape mismatch");
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    for (std::size_t j = 0; j < c; ++j) y(i, j) = xv(i, j) * scale[j] + offset[j];
  }
  return custom({x}, std::move(y), [scale = std::move(scale)](const Tensor& g, std::span<Tensor* const> gi) {
    const std::size_t c = scale.size();
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * scale[i % c];
  });
}

Var Graph::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) throw ShapeError("add: shape mismatch");
  Tensor y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return custom({a, b}, std::move(y), [](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      (*gi[0])[i] += g[i];
      (*gi[1])[i] += g[i];
    }
  });
}

Var Graph::scale(Var a, double s) {
  Tensor y = value(a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= s;
  return custom({a}, std::move(y), [s](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * s;
  });
}

Var Graph::sum(Var a) {
  const Tensor& av = value(a);
  double s = 0.0;
  for (double v : av.values()) s += v;
  return custom({a}, Tensor::scalar(s), [](const Tensor& g, std::span<Tensor* const> gi) {
    for (double& v : gi[0]->values()) v += g[0];
  });
}

void Graph::backward(Var loss) {
  const Node& l = node(loss);
  if (l.value.size() != 1) throw InvalidArgument("backward: loss must be a scalar node");
  for (auto& n : nodes_) n.grad = Tensor(n.value.shape());
  nodes_[loss.id].grad[0] = 1.0;
  std::vector<Tensor*> input_grads;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.param != nullptr) {
      auto dst = n.param->grad.values();
      auto src = n.grad.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    if (!n.backward) continue;
    input_grads.clear();
    for (std::size_t in : n.inputs) input_grads.push_back(&nodes_[in].grad);
    n.backward(n.grad, input_grads);
  }
}

void Adam::step(std::span<Parameter* const> params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Parameter* p : params) {
    auto w = p->value.values();
    auto g = p->grad.values();
    auto m = p->m.values();
    auto v = p->v.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace mast::nn
