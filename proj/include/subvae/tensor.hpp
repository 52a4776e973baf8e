#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace subvae {

using Index = std::int64_t;
using Shape = std::vector<Index>;

enum class ErrorKind { shape, precondition, io, config, data };

const char* to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` feeds the CLI's error report.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Global switch for tape recording. Evaluation and probe feature export run
// with recording disabled.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Shared handle to a row-major N-dimensional array. Copies alias the same
/// storage; use `clone()` or `detach()` for an independent value.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<TensorNode<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const Index n = subvae::numel(shape);
    return from_vector(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value),
                       requires_grad);
  }

  static Tensor from_vector(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (subvae::numel(shape) != static_cast<Index>(values.size())) {
      throw Error(ErrorKind::shape, "tensor shape " + to_string(shape) + " does not match " +
                                        std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_vector({}, {value}, requires_grad);
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  Index numel() const { return static_cast<Index>(node_->data.size()); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T* ptr() { return node_->data.data(); }
  const T* ptr() const { return node_->data.data(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() { return node_->ensure_grad(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }

  T item() const {
    if (node_->data.size() != 1) {
      throw Error(ErrorKind::shape, "item() on tensor with " + std::to_string(numel()) +
                                        " elements");
    }
    return node_->data[0];
  }

  Tensor detach() const { return from_vector(shape(), node_->data, false); }

  Tensor clone() const {
    auto copy = from_vector(shape(), node_->data, node_->requires_grad);
    return copy;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> values(node_->data.begin(), node_->data.end());
    return Tensor<U>::from_vector(shape(), std::move(values), node_->requires_grad);
  }

  const NodePtr& node() const { return node_; }
  bool same(const Tensor& other) const { return node_ == other.node_; }

 private:
  NodePtr node_;
};

/// Ordered record of differentiable operations for one thread. Entries are
/// appended as operations execute, so every entry's inputs precede it.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;
  using BackwardFn = std::function<void()>;

  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

  void record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn fn) {
    entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(fn)});
  }

  /// Propagates d(loss)/d(.) into every reachable tensor with requires_grad.
  /// Intermediate gradients are reset on each call; leaf gradients accumulate.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw Error(ErrorKind::shape, "backward() requires a scalar loss, got shape " +
                                        to_string(loss.shape()));
    }
    std::size_t end = entries_.size();
    while (end > 0 && entries_[end - 1].output != loss.node()) --end;
    for (std::size_t i = 0; i < end; ++i) {
      entries_[i].output->grad.clear();
    }
    loss.node()->ensure_grad()[0] += T(1);
    for (std::size_t i = end; i-- > 0;) {
      Entry& entry = entries_[i];
      if (entry.output->grad.empty()) continue;
      entry.backward();
    }
  }

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>::current().backward(loss);
}

template <typename T>
void clear_tape() {
  Tape<T>::current().clear();
}

/// Named trainable tensor (e.g. "encoder.conv1.weight").
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

}  // namespace subvae
