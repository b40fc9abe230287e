#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mammut {

/// Floating-point width used for tensor storage. Training runs at f32,
/// gradient checking at f64.
enum class Precision { f32, f64 };

Precision default_precision();
void set_default_precision(Precision p);

/// Restores the previous default precision on scope exit.
class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

/// Invokes `f.template operator()<T>()` with T = float or double.
template <class F>
decltype(auto) dispatch(Precision p, F&& f) {
  if (p == Precision::f32) return std::forward<F>(f).template operator()<float>();
  return std::forward<F>(f).template operator()<double>();
}

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Flat numeric storage tagged with its precision.
class Buffer {
 public:
  Buffer() = default;
  Buffer(Precision p, std::size_t n);

  Precision precision() const { return precision_; }
  std::size_t size() const {
    return precision_ == Precision::f32 ? f32_.size() : f64_.size();
  }
  bool empty() const { return size() == 0; }

  template <class T>
  std::span<T> as();
  template <class T>
  std::span<const T> as() const;

  double get(std::size_t i) const {
    return precision_ == Precision::f32 ? static_cast<double>(f32_[i]) : f64_[i];
  }
  void set(std::size_t i, double v) {
    if (precision_ == Precision::f32) {
      f32_[i] = static_cast<float>(v);
    } else {
      f64_[i] = v;
    }
  }
  void fill(double v);

 private:
  Precision precision_ = Precision::f32;
  std::vector<float> f32_;
  std::vector<double> f64_;
};

template <>
inline std::span<float> Buffer::as<float>() {
  return f32_;
}
template <>
inline std::span<double> Buffer::as<double>() {
  return f64_;
}
template <>
inline std::span<const float> Buffer::as<float>() const {
  return f32_;
}
template <>
inline std::span<const double> Buffer::as<double>() const {
  return f64_;
}

namespace detail {

/// One vertex of the gradient tape. Leaves have no inputs and no backward rule.
struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  Buffer& ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::span<const double> values, bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  /// Internal: wraps a freshly computed value. The node becomes part of the
  /// tape when `backward` is set and some input requires grad.
  static Tensor make(std::shared_ptr<detail::Node> node);

  bool defined() const { return static_cast<bool>(node_); }
  explicit operator bool() const { return defined(); }

  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  Precision precision() const;
  std::string_view op() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  template <class T>
  std::span<const T> data() const {
    return std::as_const(node_->value).template as<T>();
  }
  /// Direct write access, for parameter updates and finite differences.
  template <class T>
  std::span<T> mutable_data() {
    return node_->value.template as<T>();
  }
  const Buffer& buffer() const;
  Buffer& mutable_buffer();

  double item() const;
  double at(std::size_t flat_index) const;
  std::vector<double> to_vector() const;

  bool has_grad() const;
  const Buffer& grad_buffer() const;
  Buffer& mutable_grad_buffer();
  std::vector<double> grad_vector() const;
  void zero_grad();

  /// Copy of the value with no tape history.
  Tensor detach() const;

  /// Stable identity of the underlying storage object.
  const detail::Node* id() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Accumulates d(root)/d(leaf) into every reachable leaf that requires grad.
/// Intermediate gradients restart from zero on every call; leaf gradients add up.
void backward(const Tensor& root);

/// Leaves (requires_grad) reachable from `root` along the tape.
std::vector<const detail::Node*> reachable_leaves(const Tensor& root);

bool grad_enabled();

/// Disables tape recording inside its scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

namespace testing {
/// Negates the gradient flowing through every node produced by `op` during
/// backward. Empty string disables. Used to validate the gradient checker.
void inject_backward_sign_flip(std::string op);
}  // namespace testing

}  // namespace mammut
