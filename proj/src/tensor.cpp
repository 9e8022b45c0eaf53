#include "mmer/tensor.hpp"

#include <sstream>

namespace mmer {

namespace {

thread_local Tape* current_tape = nullptr;

Index trailing_cols(const Shape& shape) { return shape.empty() ? 1 : shape.back(); }

void check_shape(const Shape& shape) {
  for (Index e : shape) {
    if (e < 1) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

Tensor::Tensor(Shape shape) {
  check_shape(shape);
  auto node = std::make_shared<detail::Node>();
  const Index cols = trailing_cols(shape);
  node->value = RowMatrix::Zero(mmer::numel(shape) / cols, cols);
  node->shape = std::move(shape);
  node_ = std::move(node);
}

Tensor::Tensor(Shape shape, RowMatrix values) {
  check_shape(shape);
  const Index cols = trailing_cols(shape);
  if (values.cols() != cols || values.rows() * values.cols() != mmer::numel(shape)) {
    throw ShapeError("values of size " + std::to_string(values.rows()) + "x" + std::to_string(values.cols()) +
                     " do not match shape " + to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(values);
  node->shape = std::move(shape);
  node_ = std::move(node);
}

Tensor Tensor::from_matrix(RowMatrix values) {
  Shape shape{values.rows(), values.cols()};
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::row(const Vector& values) {
  RowMatrix m = values.transpose();
  return Tensor({values.size()}, std::move(m));
}

Tensor Tensor::scalar(double value) {
  RowMatrix m(1, 1);
  m(0, 0) = value;
  return Tensor(Shape{}, std::move(m));
}

const Shape& Tensor::shape() const { return node_->shape; }

Index Tensor::dim(Index axis) const {
  const Index r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + to_string(shape()));
  return shape()[static_cast<std::size_t>(axis)];
}

Index Tensor::numel() const { return mmer::numel(shape()); }
Index Tensor::rows() const { return node_->value.rows(); }
Index Tensor::cols() const { return node_->value.cols(); }

const RowMatrix& Tensor::value() const { return node_->value; }
RowMatrix& Tensor::mutable_value() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->value(0, 0);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node_->is_leaf) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return node_->grad.size() > 0; }

const RowMatrix& Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() { node_->grad.resize(0, 0); }

const char* Tensor::op_name() const { return node_->op; }

Tensor Tensor::detach() const { return Tensor(shape(), value()); }

Tensor record_op(const char* name, Shape shape, RowMatrix value, std::vector<Tensor> inputs, BackwardFn backward) {
  if (!value.allFinite()) throw NumericError(std::string("non-finite values produced by ") + name);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = name;
  node->is_leaf = false;

  Tape* tape = current_tape;
  bool needs_grad = false;
  if (tape != nullptr) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward = std::move(backward);
    tape->record(node);
  }
  return Tensor(std::move(node));
}

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

Tape* active_tape() { return current_tape; }

void backward(const Tensor& loss, Tape& tape) {
  if (loss.numel() != 1) throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;

  for (const auto& node : tape.nodes()) node->grad.resize(0, 0);

  detail::Node* root = loss.node();
  if (root->is_leaf) {
    if (root->grad.size() == 0) root->grad = RowMatrix::Zero(1, 1);
    root->grad(0, 0) += 1.0;
    return;
  }
  root->grad = RowMatrix::Ones(1, 1);

  std::vector<RowMatrix*> buffers;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node& node = **it;
    if (node.grad.size() == 0) continue;
    if (!node.grad.allFinite()) {
      throw NumericError(std::string("non-finite gradient flowing into backward of ") + node.op);
    }
    buffers.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      detail::Node& in = *node.inputs[i];
      if (!in.requires_grad) continue;
      if (in.grad.size() == 0) in.grad = RowMatrix::Zero(in.value.rows(), in.value.cols());
      buffers[i] = &in.grad;
    }
    node.backward(node.grad, buffers);
  }
}

}  // namespace mmer
