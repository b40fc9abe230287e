#include "mammut/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <unordered_set>

#include "mammut/errors.hpp"
#include "mammut/tensor/ops.hpp"

namespace mammut {
namespace {

double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

class CaseRng {
 public:
  explicit CaseRng(std::uint64_t seed) : gen_(seed * 0x9E3779B97F4A7C15ULL + 17) {}

  std::size_t extent(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(gen_);
  }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }

  Tensor tensor(Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = uniform(lo, hi);
    return Tensor::from(std::move(shape), v, grad);
  }

  std::vector<std::int32_t> ids(std::size_t n, std::size_t bound) {
    std::vector<std::int32_t> out(n);
    for (auto& x : out) x = static_cast<std::int32_t>(extent(0, bound - 1));
    return out;
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

// Contracts an arbitrary output against fixed random weights so every
// output coordinate carries a distinct gradient.
Tensor probe(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

GradcheckProblem unary_problem(std::uint64_t seed, Tensor (*op)(const Tensor&), double lo, double hi) {
  CaseRng rng(seed);
  Tensor x = rng.tensor({rng.extent(1, 4), rng.extent(1, 5)}, lo, hi);
  Tensor w = rng.tensor(x.shape(), -1, 1, false);
  return {{x}, [=] { return probe(op(x), w); }};
}

std::vector<GradcheckCase> build_cases() {
  std::vector<GradcheckCase> cases;
  auto add_case = [&](std::string name, std::function<GradcheckProblem(std::uint64_t)> make) {
    cases.push_back({std::move(name), std::move(make), 1e-4});
  };

  auto binary_case = [](Tensor (*op)(const Tensor&, const Tensor&)) {
    return [op](std::uint64_t seed) {
      CaseRng rng(seed);
      Shape a_shape{rng.extent(1, 3), rng.extent(1, 3), rng.extent(1, 4)};
      const auto mode = rng.extent(0, 2);
      Shape b_shape = mode == 0   ? a_shape
                      : mode == 1 ? Shape(a_shape.begin() + 1, a_shape.end())
                                  : Shape{1};
      Tensor a = rng.tensor(a_shape);
      Tensor b = rng.tensor(b_shape);
      Tensor w = rng.tensor(a_shape, -1, 1, false);
      return GradcheckProblem{{a, b}, [=] { return probe(op(a, b), w); }};
    };
  };
  add_case("add", binary_case(&add));
  add_case("sub", binary_case(&sub));
  add_case("mul", binary_case(&mul));
  add_case("scale", [](std::uint64_t seed) {
    CaseRng rng(seed);
    Tensor x = rng.tensor({rng.extent(1, 6)});
    const double f = rng.uniform(-3, 3);
    Tensor w = rng.tensor(x.shape(), -1, 1, false);
    return GradcheckProblem{{x}, [=] { return probe(scale(x, f), w); }};
  });
  add_case("exp", [](std::uint64_t s) { return unary_problem(s, &exp, -2, 2); });
  add_case("log", [](std::uint64_t s) { return unary_problem(s, &log, 0.2, 3); });
  add_case("sigmoid", [](std::uint64_t s) { return unary_problem(s, &sigmoid, -4, 4); });
  add_case("log_sigmoid", [](std::uint64_t s) { return unary_problem(s, &log_sigmoid, -6, 6); });
  add_case("gelu", [](std::uint64_t s) { return unary_problem(s, &gelu, -3, 3); });
  add_case("matmul", [](std::uint64_t seed) {
    CaseRng rng(seed);
    const std::size_t k = rng.extent(1, 5), n = rng.extent(1, 5);
    Tensor a = rng.tensor({rng.extent(1, 3), rng.extent(1, 4), k});
    Tensor b = rng.tensor({k, n});
    Tensor w = rng.tensor({a.dim(0), a.dim(1), n}, -1, 1, false);
    return GradcheckProblem{{a, b}, [=] { return probe(matmul(a, b), w); }};
  });
  add_case("batched_matmul", [](std::uint64_t seed) {
    CaseRng rng(seed);
    const std::size_t batch = rng.extent(1, 3), m = rng.extent(1, 4), k = rng.extent(1, 4),
                      n = rng.extent(1, 4);
    const bool tb = rng.extent(0, 1) == 1;
    Tensor a = rng.tensor({batch, m, k});
    Tensor b = tb ? rng.tensor({batch, n, k}) : rng.tensor({batch, k, n});
    Tensor w = rng.tensor({batch, m, n}, -1, 1, false);
    return GradcheckProblem{{a, b}, [=] { return probe(batched_matmul(a, b, tb), w); }};
  });
  add_case("reshape", [](std::uint64_t seed) {
    CaseRng rng(seed);
    const std::size_t r = rng.extent(1, 4), c = rng.extent(1, 4);
    Tensor x = rng.tensor({r, c});
    Tensor w = rng.tensor({c, r}, -1, 1, false);
    return GradcheckProblem{{x}, [=] { return probe(reshape(x, {c, r}), w); }};
  });
  add_case("permute", [](std::uint64_t seed) {
    CaseRng rng(seed);
    Shape shape{rng.extent(1, 3), rng.extent(1, 3), rng.extent(1, 3), rng.extent(1, 3)};
    std::vector<std::size_t> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    Tensor x = rng.tensor(shape);
    Shape out(4);
    for (std::size_t i = 0; i < 4; ++i) out[i] = shape[perm[i]];
    Tensor w = rng.tensor(out, -1, 1, false);
    return GradcheckProblem{{x}, [=] { return probe(permute(x, perm), w); }};
  });
  add_case("concat", [](std::uint64_t seed) {
    CaseRng rng(seed);
    const std::size_t b = rng.extent(1, 3), d = rng.extent(1, 3);
    Tensor x = rng.tensor({b, rng.extent(1, 3), d});
    Tensor y = rng.tensor({b, rng.extent(1, 3), d});
    Tensor w = rng.tensor({b, x.dim(1) + y.dim(1), d}, -1, 1, false);
    return GradcheckProblem{{x, y}, [=] { return probe(concat({x, y}, 1), w); }};
  });
  add_case("sum", [](std::uint64_t seed) {
    CaseRng rng(seed);
    Tensor x = rng.tensor({rng.extent(1, 4), rng.extent(1, 4)});
    return GradcheckProblem{{x}, [=] { return mul(sum(x), sum(x)); }};
  });
  add_case("sum_axis", [](std::uint64_t seed) {
    CaseRng rng(seed);
    Shape shape{rng.extent(1, 3), rng.extent(1, 3), rng.extent(1, 3)};
    const std::size_t axis = rng.extent(0, 2);
    Tensor x = rng.tensor(shape);
    Shape out;
    for (std::size_t i = 0; i < 3; ++i) {
      if (i != axis) out.push_back(shape[i]);
    }
    Tensor w = rng.tensor(out, -1, 1, false);
    return GradcheckProblem{{x}, [=] { return probe(sum(x, axis), w); }};
  });
  add_case("masked_softmax", [](std::uint64_t seed) {
    CaseRng rng(seed);
    const std::size_t rows = rng.extent(1, 3), n = rng.extent(1, 5);
    Tensor x = rng.tensor({rng.extent(1, 2), rows, n}, -3, 3);
    Mask mask({rows, n}, true);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t keep = rng.extent(0, n - 1);
      for (std::size_t j = 0; j < n; ++j) {
        if (j != keep && rng.extent(0, 2) == 0) mask.allowed[r * n + j] = 0;
      }
    }
    Tensor w = rng.tensor(x.shape(), -1, 1, false);
    return GradcheckProblem{{x}, [=] {
                              Tensor p = masked_softmax(x, mask);
                              return probe(mul(p, p), w);
                            }};
  });
  add_case("log_softmax", [](std::uint64_t seed) {
    CaseRng rng(seed);
    Tensor x = rng.tensor({rng.extent(1, 4), rng.extent(1, 5)}, -3, 3);
    Tensor w = rng.tensor(x.shape(), -1, 1, false);
    return GradcheckProblem{{x}, [=] { return probe(log_softmax(x), w); }};
  });
  add_case("layer_norm", [](std::uint64_t seed) {
    CaseRng rng(seed);
    const std::size_t d = rng.extent(2, 6);
    Tensor x = rng.tensor({rng.extent(1, 4), d}, -2, 2);
    Tensor g = rng.tensor({d}, 0.5, 1.5);
    Tensor b = rng.tensor({d});
    Tensor w = rng.tensor(x.shape(), -1, 1, false);
    return GradcheckProblem{{x, g, b}, [=] { return probe(layer_norm(x, g, b, 1e-5), w); }};
  });
  add_case("l2_normalize", [](std::uint64_t seed) {
    CaseRng rng(seed);
    Tensor x = rng.tensor({rng.extent(1, 4), rng.extent(1, 5)}, 0.1, 1.0);
    // Mixed signs but bounded away from the origin.
    auto xs = x.mutable_data<double>();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (rng.extent(0, 1)) xs[i] = -xs[i];
    }
    Tensor w = rng.tensor(x.shape(), -1, 1, false);
    return GradcheckProblem{{x}, [=] { return probe(l2_normalize(x), w); }};
  });
  add_case("embedding", [](std::uint64_t seed) {
    CaseRng rng(seed);
    const std::size_t vocab = rng.extent(1, 5), d = rng.extent(1, 4);
    const std::size_t b = rng.extent(1, 3), t = rng.extent(1, 4);
    Tensor table = rng.tensor({vocab, d});
    auto ids = rng.ids(b * t, vocab);
    Tensor w = rng.tensor({b, t, d}, -1, 1, false);
    return GradcheckProblem{{table}, [=] { return probe(embedding(table, ids, {b, t}), w); }};
  });
  add_case("gather_last", [](std::uint64_t seed) {
    CaseRng rng(seed);
    const std::size_t rows = rng.extent(1, 4), last = rng.extent(1, 5);
    Tensor x = rng.tensor({rows, last});
    auto idx = rng.ids(rows, last);
    Tensor w = rng.tensor({rows}, -1, 1, false);
    return GradcheckProblem{{x}, [=] { return probe(gather_last(x, idx), w); }};
  });
  add_case("bilinear_resize", [](std::uint64_t seed) {
    CaseRng rng(seed);
    Tensor g = rng.tensor({rng.extent(1, 4), rng.extent(1, 4), rng.extent(1, 3)});
    const std::size_t oh = rng.extent(1, 6), ow = rng.extent(1, 6);
    Tensor w = rng.tensor({oh, ow, g.dim(2)}, -1, 1, false);
    return GradcheckProblem{{g}, [=] { return probe(bilinear_resize(g, oh, ow), w); }};
  });
  add_case("crop2d", [](std::uint64_t seed) {
    CaseRng rng(seed);
    Tensor g = rng.tensor({rng.extent(1, 5), rng.extent(1, 5), rng.extent(1, 3)});
    const std::size_t h = rng.extent(1, g.dim(0)), w = rng.extent(1, g.dim(1));
    const std::size_t y0 = rng.extent(0, g.dim(0) - h), x0 = rng.extent(0, g.dim(1) - w);
    Tensor wt = rng.tensor({h, w, g.dim(2)}, -1, 1, false);
    return GradcheckProblem{{g}, [=] { return probe(crop2d(g, y0, x0, h, w), wt); }};
  });
  add_case("bilinear_sample", [](std::uint64_t seed) {
    CaseRng rng(seed);
    Tensor g = rng.tensor({rng.extent(1, 4), rng.extent(1, 4), rng.extent(1, 3)});
    std::vector<std::pair<double, double>> pts(rng.extent(1, 5));
    for (auto& p : pts) {
      p = {rng.uniform(0, static_cast<double>(g.dim(0) - 1)),
           rng.uniform(0, static_cast<double>(g.dim(1) - 1))};
    }
    Tensor w = rng.tensor({pts.size(), g.dim(2)}, -1, 1, false);
    return GradcheckProblem{{g}, [=] { return probe(bilinear_sample(g, pts), w); }};
  });
  return cases;
}

}  // namespace

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  return finite_diff_check([&] { return f(leaf); }, {leaf}, h);
}

double finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h) {
  if (!(h > 0)) throw ContractError("finite_diff_check: step must be positive");
  for (auto& t : inputs) t.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) analytic.push_back(t.grad_vector());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Buffer& buf = inputs[k].mutable_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double orig = buf.get(i);
      const double step = h * std::max(1.0, std::abs(orig));
      const auto at = [&](double offset) {
        buf.set(i, orig + offset);
        return f().item();
      };
      // Five-point stencil, fourth-order accurate.
      const double cd = (8 * (at(step) - at(-step)) - (at(2 * step) - at(-2 * step))) / (12 * step);
      buf.set(i, orig);
      worst = std::max(worst, rel_error(analytic[k][i], cd));
    }
  }
  return worst;
}

const std::vector<GradcheckCase>& op_gradcheck_cases() {
  static const std::vector<GradcheckCase> cases = build_cases();
  return cases;
}

std::vector<std::string> tape_ops(const Tensor& root) {
  std::set<std::string> ops;
  std::unordered_set<const detail::Node*> seen;
  std::vector<const detail::Node*> stack{root.node().get()};
  while (!stack.empty()) {
    const detail::Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (!n->is_leaf()) ops.emplace(n->op);
    for (const auto& in : n->inputs) stack.push_back(in.get());
  }
  return {ops.begin(), ops.end()};
}

GradcheckResult run_gradcheck_case(const GradcheckCase& c, std::uint64_t first_seed, int seeds,
                                   double h) {
  PrecisionScope f64(Precision::f64);
  GradcheckResult result{c.name, 0.0, c.tolerance, false};
  for (int s = 0; s < seeds; ++s) {
    GradcheckProblem p = c.make(first_seed + static_cast<std::uint64_t>(s));
    if (!result.covers_op) {
      auto ops = tape_ops(p.loss());
      result.covers_op = std::find(ops.begin(), ops.end(), c.name) != ops.end();
    }
    result.max_rel_error = std::max(result.max_rel_error, finite_diff_check(p.loss, p.inputs, h));
  }
  return result;
}

}  // namespace mammut
