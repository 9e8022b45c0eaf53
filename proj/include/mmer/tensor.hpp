#ifndef MMER_TENSOR_HPP
#define MMER_TENSOR_HPP

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle to a node holding an N-d shape and its values.
// Values are stored as a row-major Eigen matrix of (product of leading
// extents) x (last extent), so a rank-3 tensor [B, T, d] is addressed as a
// (B*T) x d matrix and batch b occupies rows [b*T, (b+1)*T).
//
// Operations executed while a Tape is active on the current thread, and with
// at least one input that requires grad, are recorded on that tape. backward()
// replays the tape in reverse.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmer {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InsufficientDataError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DegenerateAttentionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string to_string(const Shape& shape);
Index numel(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape);
  /// `values` must be (numel / last extent) x last extent.
  Tensor(Shape shape, RowMatrix values);

  static Tensor from_matrix(RowMatrix values);
  static Tensor row(const Vector& values);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  Index rank() const { return static_cast<Index>(shape().size()); }
  Index dim(Index axis) const;
  Index numel() const;
  Index rows() const;
  Index cols() const;

  const RowMatrix& value() const;
  /// Mutable access for parameter updates and test perturbations. Mutating a
  /// tensor that was already consumed by a recorded op invalidates that tape.
  RowMatrix& mutable_value();
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag = true);
  bool has_grad() const;
  const RowMatrix& grad() const;
  void zero_grad();

  /// Name of the operation that produced this tensor ("leaf" for inputs).
  const char* op_name() const;
  /// Copy of the values with no tape history.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor record_op(const char*, Shape, RowMatrix, std::vector<Tensor>,
                          std::function<void(const RowMatrix&, std::span<RowMatrix* const>)>);
};

/// Backward rule: receives the gradient of the op output and one grad buffer
/// per input (nullptr when that input does not need a gradient). Buffers are
/// zero-initialised on first use and must be accumulated into, not assigned.
using BackwardFn = std::function<void(const RowMatrix& grad_out, std::span<RowMatrix* const> input_grads)>;

/// Creates the result of a differentiable op, recording it on the active tape
/// when any input requires grad. Throws NumericError if `value` is not finite.
Tensor record_op(const char* name, Shape shape, RowMatrix value, std::vector<Tensor> inputs, BackwardFn backward);

/// Ordered record of executed differentiable operations. Append order is a
/// topological order because an op can only consume already-existing tensors.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  void record(std::shared_ptr<detail::Node> node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }
  const std::vector<std::shared_ptr<detail::Node>>& nodes() const { return nodes_; }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Makes `tape` the recording target for the current thread while alive.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Populates gradients of every requires-grad leaf reachable from `loss`.
/// Leaf gradients accumulate across calls until zero_grad(); intermediate
/// gradients are recomputed from scratch on each call. The tape is kept so
/// that callers decide when to clear it.
void backward(const Tensor& loss, Tape& tape);

namespace detail {
struct Node {
  Shape shape;
  RowMatrix value;
  RowMatrix grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};
}  // namespace detail

}  // namespace mmer

#endif  // MMER_TENSOR_HPP
