#include "mammut/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <limits>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <numeric>

#include "mammut/errors.hpp"
#include "mammut/tensor/parallel.hpp"

namespace mammut {
namespace {

int g_kernel_threads = 0;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

constexpr std::array<std::string_view, 25> kOps = {
    "add",         "sub",        "mul",          "scale",          "exp",          "log",
    "sigmoid",     "log_sigmoid", "gelu",        "matmul",         "batched_matmul", "reshape",
    "permute",     "concat",     "sum",          "sum_axis",       "masked_softmax", "log_softmax",
    "layer_norm",  "l2_normalize", "embedding",  "gather_last",    "bilinear_resize", "crop2d",
    "bilinear_sample"};

NodePtr new_node(Shape shape, Precision p, std::string_view op) {
  if (std::find(kOps.begin(), kOps.end(), op) == kOps.end()) {
    throw ContractError(concat("op '", op, "' is not in the op registry"));
  }
  auto node = std::make_shared<Node>();
  node->value = Buffer(p, numel(shape));
  node->shape = std::move(shape);
  node->op = op;
  return node;
}

Tensor finish(NodePtr node, std::initializer_list<Tensor> inputs,
              std::function<void(Node&)> rule) {
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(rule);
  }
  return Tensor::make(std::move(node));
}

Tensor finish_many(NodePtr node, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> rule) {
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(rule);
  }
  return Tensor::make(std::move(node));
}

void require_same_precision(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.precision() != b.precision()) {
    throw DimensionError(concat(op, ": operands have different precisions"));
  }
}

bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

// Number of elements of `b` repeated across `a` under the binary-op broadcast rule.
std::size_t broadcast_period(const Tensor& a, const Tensor& b, std::string_view op) {
  if (b.numel() == 1) return 1;
  if (is_suffix(a.shape(), b.shape())) return b.numel();
  throw DimensionError(concat(op, ": cannot combine shapes ", to_string(a.shape()), " and ",
                              to_string(b.shape())));
}

template <class T>
std::span<T> grad_of(Node& n) {
  return n.ensure_grad().template as<T>();
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& x, std::string_view op, Fwd fwd, Bwd bwd) {
  auto node = new_node(x.shape(), x.precision(), op);
  dispatch(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto out = node->value.as<T>();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  });
  return finish(node, {x}, [bwd](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      Node& in = *self.inputs[0];
      auto g = self.grad.as<T>();
      auto xs = std::as_const(in.value).as<T>();
      auto ys = std::as_const(self.value).as<T>();
      auto gi = grad_of<T>(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * bwd(xs[i], ys[i]);
    });
  });
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, std::string_view op) {
  require_same_precision(a, b, op);
  const std::size_t period = broadcast_period(a, b, op);
  auto node = new_node(a.shape(), a.precision(), op);
  dispatch(a.precision(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto out = node->value.as<T>();
    const std::size_t n = x.size();
    if (period == 1) {
      const T yv = y[0];
      switch (kind) {
        case BinaryKind::add: for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + yv; break;
        case BinaryKind::sub: for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - yv; break;
        case BinaryKind::mul: for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * yv; break;
      }
      return;
    }
    for (std::size_t base = 0; base < n; base += period) {
      const T* xs = x.data() + base;
      T* os = out.data() + base;
      switch (kind) {
        case BinaryKind::add: for (std::size_t j = 0; j < period; ++j) os[j] = xs[j] + y[j]; break;
        case BinaryKind::sub: for (std::size_t j = 0; j < period; ++j) os[j] = xs[j] - y[j]; break;
        case BinaryKind::mul: for (std::size_t j = 0; j < period; ++j) os[j] = xs[j] * y[j]; break;
      }
    }
  });
  return finish(node, {a, b}, [kind, period](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      auto g = self.grad.as<T>();
      auto x = std::as_const(na.value).as<T>();
      auto y = std::as_const(nb.value).as<T>();
      const std::size_t n = g.size();
      if (na.requires_grad) {
        auto ga = grad_of<T>(na);
        if (kind != BinaryKind::mul) {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        } else if (period == 1) {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[0];
        } else {
          for (std::size_t base = 0; base < n; base += period) {
            for (std::size_t j = 0; j < period; ++j) ga[base + j] += g[base + j] * y[j];
          }
        }
      }
      if (nb.requires_grad) {
        auto gb = grad_of<T>(nb);
        const T sign = kind == BinaryKind::sub ? T(-1) : T(1);
        if (period == 1) {
          T acc = 0;
          for (std::size_t i = 0; i < n; ++i) acc += kind == BinaryKind::mul ? g[i] * x[i] : g[i];
          gb[0] += sign * acc;
        } else {
          for (std::size_t base = 0; base < n; base += period) {
            if (kind == BinaryKind::mul) {
              for (std::size_t j = 0; j < period; ++j) gb[j] += g[base + j] * x[base + j];
            } else {
              for (std::size_t j = 0; j < period; ++j) gb[j] += sign * g[base + j];
            }
          }
        }
      }
    });
  });
}

// Visits the permuted layout: fn(out_offset, in_offset, run) copies `run`
// contiguous elements.
template <class F>
void for_each_permuted(const Shape& in_shape, const std::vector<std::size_t>& perm, F&& fn) {
  const std::size_t nd = in_shape.size();
  std::vector<std::size_t> in_stride(nd, 1);
  for (std::size_t i = nd; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(nd);
  std::vector<std::size_t> stride(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    out_shape[i] = in_shape[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  const std::size_t total = numel(in_shape);
  // Contiguous tail when the last axis stays last.
  const bool contiguous_tail = perm[nd - 1] == nd - 1;
  const std::size_t run = contiguous_tail ? out_shape[nd - 1] : 1;
  const std::size_t outer_axes = contiguous_tail ? nd - 1 : nd;
  std::vector<std::size_t> counter(nd, 0);
  std::size_t in_off = 0;
  for (std::size_t out_off = 0; out_off < total; out_off += run) {
    fn(out_off, in_off, run);
    for (std::size_t ax = outer_axes; ax-- > 0;) {
      ++counter[ax];
      in_off += stride[ax];
      if (counter[ax] < out_shape[ax]) break;
      in_off -= stride[ax] * out_shape[ax];
      counter[ax] = 0;
    }
  }
}

// Row-major rows of length `last` with the mask repeated every mask_rows rows.
std::size_t mask_rows_for(const Tensor& logits, const Mask& mask) {
  if (!is_suffix(logits.shape(), mask.shape) || mask.shape.empty()) {
    throw DimensionError(concat("masked_softmax: mask shape ", to_string(mask.shape),
                                " does not match logits shape ", to_string(logits.shape())));
  }
  return mask.allowed.size() / mask.shape.back();
}

struct SamplePoint {
  std::size_t i00, i01, i10, i11;  // flat grid cell indices (without channel)
  double w00, w01, w10, w11;
};

SamplePoint make_sample(double y, double x, std::size_t h, std::size_t w) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  return {y0 * w + x0,           y0 * w + x1,           y1 * w + x0,     y1 * w + x1,
          (1 - fy) * (1 - fx),   (1 - fy) * fx,         fy * (1 - fx),   fy * fx};
}

Tensor sample_grid(const Tensor& grid, std::vector<SamplePoint> samples, Shape out_shape,
                   std::string_view op) {
  if (grid.ndim() != 3) {
    throw DimensionError(concat(op, ": expected [H, W, d] grid, got ", to_string(grid.shape())));
  }
  const std::size_t d = grid.dim(2);
  auto node = new_node(std::move(out_shape), grid.precision(), op);
  dispatch(grid.precision(), [&]<class T>() {
    auto g = grid.data<T>();
    auto out = node->value.as<T>();
    for (std::size_t p = 0; p < samples.size(); ++p) {
      const auto& s = samples[p];
      for (std::size_t c = 0; c < d; ++c) {
        out[p * d + c] = static_cast<T>(s.w00 * g[s.i00 * d + c] + s.w01 * g[s.i01 * d + c] +
                                        s.w10 * g[s.i10 * d + c] + s.w11 * g[s.i11 * d + c]);
      }
    }
  });
  return finish(node, {grid}, [samples = std::move(samples), d](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      auto g = self.grad.as<T>();
      auto gi = grad_of<T>(*self.inputs[0]);
      for (std::size_t p = 0; p < samples.size(); ++p) {
        const auto& s = samples[p];
        for (std::size_t c = 0; c < d; ++c) {
          const T gv = g[p * d + c];
          gi[s.i00 * d + c] += static_cast<T>(s.w00 * gv);
          gi[s.i01 * d + c] += static_cast<T>(s.w01 * gv);
          gi[s.i10 * d + c] += static_cast<T>(s.w10 * gv);
          gi[s.i11 * d + c] += static_cast<T>(s.w11 * gv);
        }
      }
    });
  });
}

double corner_aligned(std::size_t i, std::size_t in, std::size_t out) {
  if (out == 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

}  // namespace

std::span<const std::string_view> registered_ops() { return kOps; }

int kernel_threads() { return g_kernel_threads; }
void set_kernel_threads(int n) { g_kernel_threads = std::max(0, n); }
void configure_kernel_threads_from_env() {
  if (const char* env = std::getenv("MAMMUT_THREADS")) set_kernel_threads(std::atoi(env));
}

void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, std::numeric_limits<int>::max());
  mallopt(M_TOP_PAD, 256 << 20);
#endif
}

Mask mask_and(const Mask& a, const Mask& b) {
  if (a.shape != b.shape) {
    throw DimensionError(concat("mask_and: shapes ", to_string(a.shape), " and ",
                                to_string(b.shape), " differ"));
  }
  Mask out(a.shape, false);
  for (std::size_t i = 0; i < out.allowed.size(); ++i) out.allowed[i] = a.allowed[i] & b.allowed[i];
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](auto v) { return static_cast<decltype(v)>(v * factor); },
      [factor](auto, auto y) { return static_cast<decltype(y)>(factor); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](auto v) { return std::exp(v); }, [](auto, auto y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](auto v) { return std::log(v); }, [](auto v, auto) { return 1 / v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](auto v) {
        using T = decltype(v);
        return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
      },
      [](auto, auto y) { return y * (1 - y); });
}

Tensor log_sigmoid(const Tensor& x) {
  return unary(
      x, "log_sigmoid",
      [](auto v) {
        using T = decltype(v);
        return std::min(v, T(0)) - std::log1p(std::exp(-std::abs(v)));
      },
      [](auto v, auto) {
        using T = decltype(v);
        // d/dv log sigmoid(v) = sigmoid(-v)
        return v >= 0 ? std::exp(-v) / (T(1) + std::exp(-v)) : T(1) / (T(1) + std::exp(v));
      });
}

Tensor gelu(const Tensor& x) {
  // Vectorized through Eigen arrays; the tanh argument is kept for backward.
  constexpr double c = 0.7978845608028654, k = 0.044715;
  auto node = new_node(x.shape(), x.precision(), "gelu");
  dispatch(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto out = node->value.as<T>();
    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> v(in.data(), static_cast<Eigen::Index>(in.size()));
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> y(out.data(), static_cast<Eigen::Index>(out.size()));
    y = T(0.5) * v * (T(1) + (T(c) * (v + T(k) * v * v * v)).tanh());
  });
  return finish(node, {x}, [](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      Node& in = *self.inputs[0];
      auto g = self.grad.as<T>();
      auto xs = std::as_const(in.value).as<T>();
      auto gi = grad_of<T>(in);
      const auto n = static_cast<Eigen::Index>(g.size());
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> v(xs.data(), n), gv(g.data(), n);
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> out(gi.data(), n);
      const Eigen::Array<T, Eigen::Dynamic, 1> t = (T(c) * (v + T(k) * v * v * v)).tanh();
      out += gv * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * T(c) * (T(1) + T(3 * k) * v * v));
    });
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_precision(a, b, "matmul");
  if (a.ndim() < 2 || b.ndim() != 2 || a.shape().back() != b.dim(0)) {
    throw DimensionError(concat("matmul: shape mismatch ", to_string(a.shape()), " x ",
                                to_string(b.shape())));
  }
  const std::size_t k = b.dim(0);
  const std::size_t n = b.dim(1);
  const std::size_t m = a.numel() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  auto node = new_node(std::move(out_shape), a.precision(), "matmul");
  dispatch(a.precision(), [&]<class T>() {
    ConstMatMap<T> am(a.data<T>().data(), m, k);
    ConstMatMap<T> bm(b.data<T>().data(), k, n);
    MatMap<T> cm(node->value.as<T>().data(), m, n);
    parallel_for(m, 64, [&](std::size_t r0, std::size_t r1) {
      cm.middleRows(r0, r1 - r0).noalias() = am.middleRows(r0, r1 - r0) * bm;
    });
  });
  return finish(node, {a, b}, [m, k, n](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      ConstMatMap<T> g(self.grad.as<T>().data(), m, n);
      if (na.requires_grad) {
        MatMap<T> ga(grad_of<T>(na).data(), m, k);
        ConstMatMap<T> bm(std::as_const(nb.value).as<T>().data(), k, n);
        parallel_for(m, 64, [&](std::size_t r0, std::size_t r1) {
          ga.middleRows(r0, r1 - r0).noalias() += g.middleRows(r0, r1 - r0) * bm.transpose();
        });
      }
      if (nb.requires_grad) {
        MatMap<T> gb(grad_of<T>(nb).data(), k, n);
        ConstMatMap<T> am(std::as_const(na.value).as<T>().data(), m, k);
        parallel_for(k, 16, [&](std::size_t r0, std::size_t r1) {
          gb.middleRows(r0, r1 - r0).noalias() +=
              am.middleCols(r0, r1 - r0).transpose() * g;
        });
      }
    });
  });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_same_precision(a, b, "batched_matmul");
  const bool ok = a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0) &&
                  a.dim(2) == (transpose_b ? b.dim(2) : b.dim(1));
  if (!ok) {
    throw DimensionError(concat("batched_matmul: shape mismatch ", to_string(a.shape()), " x ",
                                to_string(b.shape()), transpose_b ? "^T" : ""));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  auto node = new_node({batch, m, n}, a.precision(), "batched_matmul");
  dispatch(a.precision(), [&]<class T>() {
    const T* ap = a.data<T>().data();
    const T* bp = b.data<T>().data();
    T* cp = node->value.as<T>().data();
    parallel_for(batch, 8, [&](std::size_t b0, std::size_t b1) {
      for (std::size_t i = b0; i < b1; ++i) {
        ConstMatMap<T> am(ap + i * m * k, m, k);
        MatMap<T> cm(cp + i * m * n, m, n);
        if (transpose_b) {
          cm.noalias() = am * ConstMatMap<T>(bp + i * n * k, n, k).transpose();
        } else {
          cm.noalias() = am * ConstMatMap<T>(bp + i * k * n, k, n);
        }
      }
    });
  });
  return finish(node, {a, b}, [batch, m, k, n, transpose_b](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      const T* gp = self.grad.as<T>().data();
      const T* ap = std::as_const(na.value).as<T>().data();
      const T* bp = std::as_const(nb.value).as<T>().data();
      T* gap = na.requires_grad ? grad_of<T>(na).data() : nullptr;
      T* gbp = nb.requires_grad ? grad_of<T>(nb).data() : nullptr;
      parallel_for(batch, 8, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t i = b0; i < b1; ++i) {
          ConstMatMap<T> g(gp + i * m * n, m, n);
          ConstMatMap<T> am(ap + i * m * k, m, k);
          if (transpose_b) {
            ConstMatMap<T> bm(bp + i * n * k, n, k);
            if (gap) MatMap<T>(gap + i * m * k, m, k).noalias() += g * bm;
            if (gbp) MatMap<T>(gbp + i * n * k, n, k).noalias() += g.transpose() * am;
          } else {
            ConstMatMap<T> bm(bp + i * k * n, k, n);
            if (gap) MatMap<T>(gap + i * m * k, m, k).noalias() += g * bm.transpose();
            if (gbp) MatMap<T>(gbp + i * k * n, k, n).noalias() += am.transpose() * g;
          }
        }
      });
    });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError(concat("reshape: cannot view ", to_string(x.shape()), " as ",
                                to_string(shape)));
  }
  auto node = new_node(std::move(shape), x.precision(), "reshape");
  node->value = x.buffer();
  return finish(node, {x}, [](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      auto g = self.grad.as<T>();
      auto gi = grad_of<T>(*self.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    });
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t nd = x.ndim();
  std::vector<std::size_t> check = perm;
  std::sort(check.begin(), check.end());
  bool valid = perm.size() == nd;
  for (std::size_t i = 0; valid && i < nd; ++i) valid = check[i] == i;
  if (!valid) throw DimensionError("permute: invalid axis permutation for " + to_string(x.shape()));
  Shape out_shape(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = x.dim(perm[i]);
  auto node = new_node(std::move(out_shape), x.precision(), "permute");
  Shape in_shape = x.shape();
  dispatch(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto out = node->value.as<T>();
    for_each_permuted(in_shape, perm, [&](std::size_t o, std::size_t i, std::size_t run) {
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(i), run,
                  out.begin() + static_cast<std::ptrdiff_t>(o));
    });
  });
  return finish(node, {x}, [in_shape, perm](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      auto g = self.grad.as<T>();
      auto gi = grad_of<T>(*self.inputs[0]);
      for_each_permuted(in_shape, perm, [&](std::size_t o, std::size_t i, std::size_t run) {
        for (std::size_t r = 0; r < run; ++r) gi[i + r] += g[o + r];
      });
    });
  });
}

Tensor transpose(const Tensor& x) {
  if (x.ndim() != 2) throw DimensionError("transpose: expected 2-D, got " + to_string(x.shape()));
  return permute(x, {1, 0});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require_same_precision(parts.front(), p, "concat");
    bool ok = p.ndim() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i) ok = i == axis || p.dim(i) == first[i];
    if (!ok) {
      throw DimensionError(concat("concat: shape ", to_string(p.shape()), " incompatible with ",
                                  to_string(first), " along axis ", axis));
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> spans;
  for (const auto& p : parts) spans.push_back(p.dim(axis) * inner);
  const std::size_t row = out_shape[axis] * inner;
  auto node = new_node(std::move(out_shape), first.empty() ? default_precision() : parts.front().precision(), "concat");
  dispatch(node->value.precision(), [&]<class T>() {
    auto out = node->value.as<T>();
    std::size_t col = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      auto in = parts[p].data<T>();
      for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * spans[p]), spans[p],
                    out.begin() + static_cast<std::ptrdiff_t>(o * row + col));
      }
      col += spans[p];
    }
  });
  return finish_many(node, parts, [spans, outer, row](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      auto g = self.grad.as<T>();
      std::size_t col = 0;
      for (std::size_t p = 0; p < self.inputs.size(); ++p) {
        Node& in = *self.inputs[p];
        if (in.requires_grad) {
          auto gi = grad_of<T>(in);
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t j = 0; j < spans[p]; ++j) gi[o * spans[p] + j] += g[o * row + col + j];
          }
        }
        col += spans[p];
      }
    });
  });
}

Tensor sum(const Tensor& x) {
  auto node = new_node({1}, x.precision(), "sum");
  dispatch(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    node->value.as<T>()[0] = static_cast<T>(std::accumulate(in.begin(), in.end(), 0.0));
  });
  return finish(node, {x}, [](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      const T g = self.grad.as<T>()[0];
      for (auto& v : grad_of<T>(*self.inputs[0])) v += g;
    });
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, std::size_t axis) {
  if (axis >= x.ndim()) throw DimensionError(concat("sum: axis ", axis, " out of range for ", to_string(x.shape())));
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
  Shape out_shape;
  for (std::size_t i = 0; i < x.ndim(); ++i) {
    if (i != axis) out_shape.push_back(x.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  auto node = new_node(std::move(out_shape), x.precision(), "sum_axis");
  dispatch(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto out = node->value.as<T>();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t l = 0; l < len; ++l) {
        for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += in[(o * len + l) * inner + i];
      }
    }
  });
  return finish(node, {x}, [outer, len, inner](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      auto g = self.grad.as<T>();
      auto gi = grad_of<T>(*self.inputs[0]);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
          for (std::size_t i = 0; i < inner; ++i) gi[(o * len + l) * inner + i] += g[o * inner + i];
        }
      }
    });
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor masked_softmax(const Tensor& logits, const Mask& mask) {
  const std::size_t mask_rows = mask_rows_for(logits, mask);
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.numel() / n;
  for (std::size_t r = 0; r < mask_rows; ++r) {
    bool any = false;
    for (std::size_t j = 0; j < n && !any; ++j) any = mask.at(r * n + j);
    if (!any) throw InvalidMaskError(concat("masked_softmax: row ", r, " has every position masked"));
  }
  auto node = new_node(logits.shape(), logits.precision(), "masked_softmax");
  dispatch(logits.precision(), [&]<class T>() {
    auto in = logits.data<T>();
    auto out = node->value.as<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::uint8_t* m = mask.allowed.data() + (r % mask_rows) * n;
      const T* x = in.data() + r * n;
      T* y = out.data() + r * n;
      T hi = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (m[j]) hi = std::max(hi, x[j]);
      }
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        y[j] = m[j] ? std::exp(x[j] - hi) : T(0);
        total += y[j];
      }
      for (std::size_t j = 0; j < n; ++j) y[j] /= total;
    }
  });
  return finish(node, {logits}, [rows, n](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      auto g = self.grad.as<T>();
      auto y = std::as_const(self.value).as<T>();
      auto gi = grad_of<T>(*self.inputs[0]);
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gi[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
      }
    });
  });
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  auto node = new_node(x.shape(), x.precision(), "log_softmax");
  dispatch(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto out = node->value.as<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = in.data() + r * n;
      const T hi = *std::max_element(xr, xr + n);
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) total += std::exp(xr[j] - hi);
      const T lse = hi + std::log(total);
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] = xr[j] - lse;
    }
  });
  return finish(node, {x}, [rows, n](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      auto g = self.grad.as<T>();
      auto y = std::as_const(self.value).as<T>();
      auto gi = grad_of<T>(*self.inputs[0]);
      for (std::size_t r = 0; r < rows; ++r) {
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) total += g[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          gi[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * total;
        }
      }
    });
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError(concat("layer_norm: gain/bias ", to_string(gain.shape()), "/",
                                to_string(bias.shape()), " do not match feature size ", d));
  }
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  require_same_precision(x, gain, "layer_norm");
  require_same_precision(x, bias, "layer_norm");
  const std::size_t rows = x.numel() / d;
  auto node = new_node(x.shape(), x.precision(), "layer_norm");
  auto rstd = std::make_shared<std::vector<double>>(rows);
  auto xhat = std::make_shared<Buffer>(x.precision(), x.numel());
  dispatch(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto gv = gain.data<T>();
    auto bv = bias.data<T>();
    auto out = node->value.as<T>();
    auto xh = xhat->as<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = in.data() + r * d;
      T mu = 0;
      for (std::size_t j = 0; j < d; ++j) mu += xr[j];
      mu /= static_cast<T>(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= static_cast<T>(d);
      const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
      (*rstd)[r] = rs;
      for (std::size_t j = 0; j < d; ++j) {
        xh[r * d + j] = (xr[j] - mu) * rs;
        out[r * d + j] = xh[r * d + j] * gv[j] + bv[j];
      }
    }
  });
  return finish(node, {x, gain, bias}, [rows, d, rstd, xhat](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      Node& nx = *self.inputs[0];
      Node& ng = *self.inputs[1];
      Node& nb = *self.inputs[2];
      auto g = self.grad.as<T>();
      auto xh = std::as_const(*xhat).as<T>();
      auto gv = std::as_const(ng.value).as<T>();
      if (ng.requires_grad || nb.requires_grad) {
        auto gg = ng.requires_grad ? grad_of<T>(ng) : std::span<T>();
        auto gb = nb.requires_grad ? grad_of<T>(nb) : std::span<T>();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d; ++j) {
            if (!gg.empty()) gg[j] += g[r * d + j] * xh[r * d + j];
            if (!gb.empty()) gb[j] += g[r * d + j];
          }
        }
      }
      if (nx.requires_grad) {
        auto gx = grad_of<T>(nx);
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_dxh = 0, mean_dxh_xh = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = g[r * d + j] * gv[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[r * d + j];
          }
          mean_dxh /= static_cast<T>(d);
          mean_dxh_xh /= static_cast<T>(d);
          const T rs = static_cast<T>((*rstd)[r]);
          for (std::size_t j = 0; j < d; ++j) {
            const T dxh = g[r * d + j] * gv[j];
            gx[r * d + j] += rs * (dxh - mean_dxh - xh[r * d + j] * mean_dxh_xh);
          }
        }
      }
    });
  });
}

Tensor l2_normalize(const Tensor& x) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  auto norms = std::make_shared<std::vector<double>>(rows);
  auto node = new_node(x.shape(), x.precision(), "l2_normalize");
  dispatch(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto out = node->value.as<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      T ss = 0;
      for (std::size_t j = 0; j < d; ++j) ss += in[r * d + j] * in[r * d + j];
      const T nrm = std::max(std::sqrt(ss), static_cast<T>(1e-12));
      (*norms)[r] = nrm;
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[r * d + j] / nrm;
    }
  });
  return finish(node, {x}, [rows, d, norms](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      auto g = self.grad.as<T>();
      auto y = std::as_const(self.value).as<T>();
      auto gi = grad_of<T>(*self.inputs[0]);
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
        const T nrm = static_cast<T>((*norms)[r]);
        for (std::size_t j = 0; j < d; ++j) gi[r * d + j] += (g[r * d + j] - y[r * d + j] * dot) / nrm;
      }
    });
  });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids, Shape out_prefix) {
  if (table.ndim() != 2) throw DimensionError("embedding: table must be [V, d], got " + to_string(table.shape()));
  if (numel(out_prefix) != ids.size()) {
    throw DimensionError(concat("embedding: ", ids.size(), " ids cannot fill prefix ", to_string(out_prefix)));
  }
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<std::int32_t> rows(ids.begin(), ids.end());
  for (auto id : rows) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DimensionError(concat("embedding: id ", id, " outside table of ", vocab, " rows"));
    }
  }
  Shape out_shape = std::move(out_prefix);
  out_shape.push_back(d);
  auto node = new_node(std::move(out_shape), table.precision(), "embedding");
  dispatch(table.precision(), [&]<class T>() {
    auto tab = table.data<T>();
    auto out = node->value.as<T>();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(tab.begin() + static_cast<std::ptrdiff_t>(rows[r] * d), d,
                  out.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
  });
  return finish(node, {table}, [rows = std::move(rows), d](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      auto g = self.grad.as<T>();
      auto gi = grad_of<T>(*self.inputs[0]);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t j = 0; j < d; ++j) gi[rows[r] * d + j] += g[r * d + j];
      }
    });
  });
}

Tensor gather_last(const Tensor& x, std::span<const std::int32_t> index) {
  const std::size_t last = x.shape().back();
  const std::size_t rows = x.numel() / last;
  if (index.size() != rows) {
    throw DimensionError(concat("gather_last: ", index.size(), " indices for ", rows, " rows of ",
                                to_string(x.shape())));
  }
  std::vector<std::int32_t> idx(index.begin(), index.end());
  for (auto i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= last) {
      throw DimensionError(concat("gather_last: index ", i, " outside last extent ", last));
    }
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape.push_back(1);
  auto node = new_node(std::move(out_shape), x.precision(), "gather_last");
  dispatch(x.precision(), [&]<class T>() {
    auto in = x.data<T>();
    auto out = node->value.as<T>();
    for (std::size_t r = 0; r < rows; ++r) out[r] = in[r * last + idx[r]];
  });
  return finish(node, {x}, [idx = std::move(idx), last](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      auto g = self.grad.as<T>();
      auto gi = grad_of<T>(*self.inputs[0]);
      for (std::size_t r = 0; r < idx.size(); ++r) gi[r * last + idx[r]] += g[r];
    });
  });
}

Tensor bilinear_resize(const Tensor& grid, std::size_t out_h, std::size_t out_w) {
  if (grid.ndim() != 3 || out_h == 0 || out_w == 0) {
    throw DimensionError(concat("bilinear_resize: cannot resize ", to_string(grid.shape()), " to ",
                                out_h, "x", out_w));
  }
  const std::size_t h = grid.dim(0), w = grid.dim(1);
  std::vector<SamplePoint> samples;
  samples.reserve(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      samples.push_back(make_sample(corner_aligned(i, h, out_h), corner_aligned(j, w, out_w), h, w));
    }
  }
  return sample_grid(grid, std::move(samples), {out_h, out_w, grid.dim(2)}, "bilinear_resize");
}

Tensor crop2d(const Tensor& grid, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (grid.ndim() != 3 || h == 0 || w == 0 || y0 + h > grid.dim(0) || x0 + w > grid.dim(1)) {
    throw DimensionError(concat("crop2d: rect (", y0, ",", x0, ",", h, ",", w, ") outside ",
                                to_string(grid.shape())));
  }
  const std::size_t gw = grid.dim(1), d = grid.dim(2);
  auto node = new_node({h, w, d}, grid.precision(), "crop2d");
  dispatch(grid.precision(), [&]<class T>() {
    auto in = grid.data<T>();
    auto out = node->value.as<T>();
    for (std::size_t i = 0; i < h; ++i) {
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(((y0 + i) * gw + x0) * d), w * d,
                  out.begin() + static_cast<std::ptrdiff_t>(i * w * d));
    }
  });
  return finish(node, {grid}, [y0, x0, h, w, gw, d](Node& self) {
    dispatch(self.value.precision(), [&]<class T>() {
      auto g = self.grad.as<T>();
      auto gi = grad_of<T>(*self.inputs[0]);
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w * d; ++j) gi[((y0 + i) * gw + x0) * d + j] += g[i * w * d + j];
      }
    });
  });
}

Tensor bilinear_sample(const Tensor& grid, std::span<const std::pair<double, double>> points) {
  if (grid.ndim() != 3 || points.empty()) {
    throw DimensionError("bilinear_sample: expected [H, W, d] grid and at least one point");
  }
  std::vector<SamplePoint> samples;
  samples.reserve(points.size());
  for (auto [y, x] : points) samples.push_back(make_sample(y, x, grid.dim(0), grid.dim(1)));
  return sample_grid(grid, std::move(samples), {points.size(), grid.dim(2)}, "bilinear_sample");
}

}  // namespace mammut
