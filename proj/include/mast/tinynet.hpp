#pragma once

// Minimal reverse-mode differentiation over dense row-major tensors.
//
// A Graph is a tape: nodes are appended in evaluation order, so a reverse
// sweep over the tape is a valid topological order for backward. Parameters
// live outside the graph and receive accumulated gradients through leaf nodes.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mast::nn {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, v); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  // First dimension; the remaining dimensions are flattened into cols().
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return rows() == 0 ? 0 : data_.size() / rows(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols(), cols()}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols(), cols()}; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void fill(double v);

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Adam moments.
  Tensor m;
  Tensor v;

  Parameter() = default;
  Parameter(std::string n, Tensor init);
  void zero_grad() { grad.fill(0.0); }
};

struct Var {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

class Graph {
 public:
  // Receives the gradient of the node's output and accumulates into input gradients.
  using BackwardFn = std::function<void(const Tensor& out_grad, std::span<Tensor* const> input_grads)>;

  Var constant(Tensor t);
  Var parameter(Parameter& p);

  // x[B x in] * w[in x out] + b[1 x out].
  Var linear(Var x, Var w, Var b);
  // x * sigmoid(x), elementwise.
  Var silu(Var x);
  // Row-wise softmax with max subtraction.
  Var softmax_rows(Var x);
  // y[i, j] = x[i, j] * scale[j] + offset[j].
  Var column_affine(Var x, std::vector<double> scale, std::vector<double> offset);
  Var add(Var a, Var b);
  Var scale(Var a, double s);
  // Sum of all entries as a 1 x 1 node.
  Var sum(Var a);

  // Arbitrary node with a caller-supplied backward.
  Var custom(std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape; loss must be 1 x 1.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  Var push(Node n);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. The step counter is part of the optimizer state.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(std::span<Parameter* const> params);
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
};

}  // namespace mast::nn
