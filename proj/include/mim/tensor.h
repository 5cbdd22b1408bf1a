#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mim {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Graph recording is on by default; NoGradGuard turns it off for the
// current thread (inference, finite differences).
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
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads `grad` of this node and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Shared handle to a node of the autograd graph. Copies alias the same
/// storage; results of ops are never written after creation, parameters are
/// updated in place by the optimizer.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from_data(Shape shape, std::vector<T> data,
                               bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size(int axis) const;
  std::int64_t numel() const {
    return static_cast<std::int64_t>(node_->data.size());
  }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty() || node_->data.empty(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }

  T item() const;

  /// Reverse-mode sweep from a scalar root with seed 1.
  void backward() const;
  void zero_grad() { node_->grad.clear(); }

  /// Fresh leaf holding a copy of the values.
  BasicTensor detach() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Builds an op result. The backward rule is attached only when recording is
/// enabled and some input requires a gradient.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           const std::vector<BasicTensor<T>>& inputs,
                           const char* op,
                           std::function<void(Node<T>&)> backward);

/// Converts values between precisions; the result is a leaf.
template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& x, bool requires_grad = false) {
  std::vector<To> out(x.data().begin(), x.data().end());
  return BasicTensor<To>::from_data(x.shape(), std::move(out), requires_grad);
}

}  // namespace mim
