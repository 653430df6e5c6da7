#pragma once

// Dense float64 tensors with a tape-based reverse-mode differentiator.
//
// A Tensor is a handle to a node holding shape and row-major values. Tensors
// created without a Graph are constants; an op whose inputs are all constants
// produces a constant and records nothing, so inference runs tape-free. Leaves
// enter a Graph through Graph::param (bound to a Parameter) or
// Graph::variable, and every op touching a recorded tensor is appended to that
// graph's tape. Graph::backward walks the tape in reverse insertion order.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pcet::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// A trainable array. Gradients accumulate into `grad` across backward calls
/// until cleared.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  /// Frozen parameters enter graphs as constants.
  bool frozen = false;

  void zero_grad() { grad.assign(value.size(), 0.0); }
};

class Graph;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily during backward
  Graph* graph = nullptr;
  Parameter* param = nullptr;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool recorded() const { return graph != nullptr; }
  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Constant (never differentiated) tensor.
  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v) { return constant({}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rows() const;
  std::size_t cols() const;
  std::size_t numel() const { return node_->value.size(); }
  std::span<const double> values() const { return node_->value; }
  double item() const;
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool recorded() const { return node_ && node_->recorded(); }
  Graph* graph() const { return node_ ? node_->graph : nullptr; }
  /// Gradient after Graph::backward; zeros for recorded tensors the loss never reached.
  std::vector<double> grad() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Append-only record of differentiable operations.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf bound to `p`; backward adds into `p.grad`. Frozen parameters become constants.
  Tensor param(Parameter& p);
  /// Differentiable leaf not tied to a parameter (inputs in gradient checks).
  Tensor variable(Shape shape, std::vector<double> values);

  /// Reverse pass from a scalar loss. Every parameter leaf in this graph ends
  /// with an allocated gradient (zero contribution when unreachable).
  void backward(const Tensor& loss);

  std::size_t size() const { return tape_.size(); }

 private:
  friend Tensor record(const char*, Shape, std::vector<double>, std::span<const Tensor>,
                       std::function<void(Node&)>);
  std::vector<std::shared_ptr<Node>> tape_;
  bool backward_done_ = false;
};

/// Wraps an op result. Records it (with `backward`) when any input is recorded;
/// otherwise returns a constant. Throws NumericError on non-finite values.
Tensor record(const char* op, Shape shape, std::vector<double> value,
              std::span<const Tensor> inputs, std::function<void(Node&)> backward);
inline Tensor record(const char* op, Shape shape, std::vector<double> value,
                     std::initializer_list<Tensor> inputs, std::function<void(Node&)> backward) {
  return record(op, std::move(shape), std::move(value),
                std::span<const Tensor>(inputs.begin(), inputs.size()), std::move(backward));
}

// ---- core ops ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// a[m,n] + b[n] (or b[1,n]) broadcast along rows.
Tensor add_row(const Tensor& a, const Tensor& b);
/// Each row i of a[m,n] multiplied by w[i]; w has m entries.
Tensor mul_col(const Tensor& a, const Tensor& w);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
inline Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}
Tensor reshape(const Tensor& a, Shape shape);
/// Rows a[idx[0]], a[idx[1]], ...; backward scatter-adds.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx);
/// Repeats a single row (shape [n] or [1,n]) m times.
Tensor broadcast_rows(const Tensor& row, std::size_t m);
/// Relu with subgradient 0 at 0.
Tensor relu(const Tensor& a);
/// Row-wise L2 normalization; rows with norm below `eps` map to zero rows.
Tensor row_l2_normalize(const Tensor& a, double eps = 1e-12);
Tensor row_softmax(const Tensor& a);
/// Max over consecutive groups of `group` rows: [g*group, n] -> [g, n].
Tensor max_pool_rows(const Tensor& a, std::size_t group);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Constant copy of the values; gradients stop here.
Tensor detach(const Tensor& a);

// ---- losses ------------------------------------------------------------

inline constexpr double kLogClamp = 1e-12;

/// Mean binary cross-entropy from logits, numerically stable form.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
/// Mean squared difference.
Tensor mse(const Tensor& pred, const Tensor& target);
/// Row-wise KL(p || q) with log arguments clamped at kLogClamp, averaged over
/// rows. Both inputs must be row-stochastic (row sums within 1e-6 of 1).
Tensor kl_rows(const Tensor& p, const Tensor& q);

// ---- optimization ------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moment state for a fixed parameter list.
class Adam {
 public:
  explicit Adam(std::vector<Parameter*> params, AdamConfig cfg = {});

  /// One update from the accumulated gradients. Frozen parameters are skipped.
  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return t_; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// ---- checkpoints -------------------------------------------------------
//
// Layout (all integers little-endian):
//   8 bytes  magic "PCETCKPT"
//   u32      version (1)
//   u32      metadata length, then metadata bytes (UTF-8 "key=value" lines)
//   u32      tensor count
//   per tensor: u32 name length, name bytes, u32 rank, rank x u64 dims,
//               numel x f64 (IEEE-754 little-endian)

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string metadata;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot(std::span<Parameter* const> params, std::string metadata = {});
/// Copies matching tensors into `params`. Throws FormatError on a shape
/// mismatch, or on a missing name when `require_all` is set.
void restore(std::span<Parameter* const> params, const Checkpoint& ckpt, bool require_all = true);

}  // namespace pcet::ad
