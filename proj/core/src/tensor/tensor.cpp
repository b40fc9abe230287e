#include "mammut/tensor/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "mammut/errors.hpp"

namespace mammut {
namespace {

thread_local Precision g_precision = Precision::f32;
thread_local bool g_grad_enabled = true;
std::string g_sign_flip_op;

}  // namespace

Precision default_precision() { return g_precision; }
void set_default_precision(Precision p) { g_precision = p; }

PrecisionScope::PrecisionScope(Precision p) : saved_(g_precision) { g_precision = p; }
PrecisionScope::~PrecisionScope() { g_precision = saved_; }

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

void testing::inject_backward_sign_flip(std::string op) { g_sign_flip_op = std::move(op); }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Buffer::Buffer(Precision p, std::size_t n) : precision_(p) {
  if (p == Precision::f32) {
    f32_.assign(n, 0.0f);
  } else {
    f64_.assign(n, 0.0);
  }
}

void Buffer::fill(double v) {
  if (precision_ == Precision::f32) {
    std::fill(f32_.begin(), f32_.end(), static_cast<float>(v));
  } else {
    std::fill(f64_.begin(), f64_.end(), v);
  }
}

Buffer& detail::Node::ensure_grad() {
  if (grad.size() != value.size() || grad.precision() != value.precision()) {
    grad = Buffer(value.precision(), value.size());
  }
  return grad;
}

namespace {

std::shared_ptr<detail::Node> new_leaf(Shape shape, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->value = Buffer(g_precision, numel(shape));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(new_leaf(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = new_leaf(std::move(shape), requires_grad);
  node->value.fill(value);
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::span<const double> values, bool requires_grad) {
  auto node = new_leaf(std::move(shape), requires_grad);
  if (values.size() != node->value.size()) {
    throw DimensionError(concat("tensor of shape ", to_string(node->shape), " needs ",
                                node->value.size(), " values, got ", values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) node->value.set(i, values[i]);
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, bool requires_grad) {
  return from(std::move(shape), std::span<const double>(values.begin(), values.size()),
              requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

Tensor Tensor::make(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw DimensionError(concat("axis ", axis, " out of range for shape ", to_string(shape())));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }
Precision Tensor::precision() const { return node_->value.precision(); }
std::string_view Tensor::op() const { return node_->op; }
bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
const Buffer& Tensor::buffer() const { return node_->value; }
Buffer& Tensor::mutable_buffer() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() requires a single-element tensor, got " + to_string(shape()));
  }
  return node_->value.get(0);
}

double Tensor::at(std::size_t i) const { return node_->value.get(i); }

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node_->value.get(i);
  return out;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }
const Buffer& Tensor::grad_buffer() const { return node_->grad; }
Buffer& Tensor::mutable_grad_buffer() { return node_->ensure_grad(); }

std::vector<double> Tensor::grad_vector() const {
  std::vector<double> out(numel(), 0.0);
  if (!has_grad()) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node_->grad.get(i);
  return out;
}

void Tensor::zero_grad() {
  if (has_grad()) node_->grad.fill(0.0);
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

namespace {

std::vector<detail::Node*> topological_order(detail::Node* root) {
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  // Iterative post-order DFS; deep transformer tapes overflow recursion.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward() requires a scalar root, got shape " +
                        (root.defined() ? to_string(root.shape()) : std::string("<undefined>")));
  }
  detail::Node* r = root.node().get();
  if (!r->requires_grad) {
    throw ContractError("backward() root is not on the tape (no input requires grad)");
  }
  auto order = topological_order(r);
  // Intermediate gradients are allocated on first use and released once
  // propagated; a node that never receives one contributes nothing.
  for (auto* node : order) {
    if (node->is_leaf()) {
      node->ensure_grad();
    } else {
      node->grad = Buffer();
    }
  }
  r->ensure_grad();
  r->grad.set(0, r->grad.get(0) + 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->is_leaf() || node->grad.empty()) continue;
    const bool flip = !g_sign_flip_op.empty() && node->op == g_sign_flip_op;
    if (flip) {
      for (std::size_t i = 0; i < node->grad.size(); ++i) node->grad.set(i, -node->grad.get(i));
    }
    node->backward(*node);
    if (node != r) {
      node->grad = Buffer();
    } else if (flip) {
      for (std::size_t i = 0; i < node->grad.size(); ++i) node->grad.set(i, -node->grad.get(i));
    }
  }
}

std::vector<const detail::Node*> reachable_leaves(const Tensor& root) {
  std::vector<const detail::Node*> leaves;
  std::unordered_set<const detail::Node*> seen;
  std::vector<const detail::Node*> stack{root.node().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    const detail::Node* n = stack.back();
    stack.pop_back();
    if (n->is_leaf()) {
      if (n->requires_grad) leaves.push_back(n);
      continue;
    }
    for (const auto& in : n->inputs) {
      if (seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  return leaves;
}

}  // namespace mammut
