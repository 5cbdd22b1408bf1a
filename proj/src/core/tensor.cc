#include "mim/tensor.h"

#include <sstream>
#include <unordered_set>

namespace mim {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from_data(std::move(shape),
                   std::vector<T>(static_cast<std::size_t>(n), value),
                   requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_data(Shape shape, std::vector<T> data,
                                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

template <typename T>
std::int64_t BasicTensor<T>::size(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  }
  return node_->data[0];
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar root, got " +
                     shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order; each node is
  // expanded once.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from_data(shape(), node_->data, false);
}

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data,
                           const std::vector<BasicTensor<T>>& inputs,
                           const char* op,
                           std::function<void(Node<T>&)> backward) {
  auto out = BasicTensor<T>::from_data(std::move(shape), std::move(data));
  auto& node = *out.node();
  node.op = op;
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) node.inputs.push_back(in.node());
  node.backward = std::move(backward);
  return out;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template BasicTensor<float> make_result(Shape, std::vector<float>,
                                        const std::vector<BasicTensor<float>>&,
                                        const char*,
                                        std::function<void(Node<float>&)>);
template BasicTensor<double> make_result(
    Shape, std::vector<double>, const std::vector<BasicTensor<double>>&,
    const char*, std::function<void(Node<double>&)>);

}  // namespace mim
