#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mammut/tensor/tensor.hpp"

namespace mammut {

/// Max over coordinates of |analytic - cd| / max(|analytic|, |cd|, 1e-8),
/// where cd is a five-point central difference with step h * max(1, |x_i|).
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

/// Same, over every element of every tensor in `inputs`. `f` must read the
/// inputs by reference; their values are perturbed in place and restored.
double finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h);

/// A scalar-valued function of some leaves, ready for finite differencing.
struct GradcheckProblem {
  std::vector<Tensor> inputs;
  std::function<Tensor()> loss;
};

struct GradcheckCase {
  /// Name of the primitive op under test (matches Tensor::op()).
  std::string name;
  std::function<GradcheckProblem(std::uint64_t seed)> make;
  double tolerance = 1e-4;
};

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool covers_op = false;
  bool passed() const { return covers_op && max_rel_error < tolerance; }
};

/// One case per differentiable primitive, each drawing random shapes from its seed.
const std::vector<GradcheckCase>& op_gradcheck_cases();

/// Op names present on the tape below `root`.
std::vector<std::string> tape_ops(const Tensor& root);

/// Runs `seeds` random instances of a case at f64 and keeps the worst error.
GradcheckResult run_gradcheck_case(const GradcheckCase& c, std::uint64_t first_seed, int seeds,
                                   double h = 1e-5);

}  // namespace mammut
