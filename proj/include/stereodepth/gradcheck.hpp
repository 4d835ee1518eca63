#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "stereodepth/tensor.hpp"

namespace stereodepth {

struct GradCheckResult {
  double max_relative_error = 0.0;
  bool passed = true;
  // Location of the worst element.
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using ScalarClosure = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares the analytic gradient of a scalar closure against central differences
// (f(x+h) - f(x-h)) / 2h for every element of every input that requires grad.
// Relative error is |a - n| / max(|a|, |n|, 1e-8).
// Throws ShapeError for non-scalar output and NonFiniteError for NaN/Inf.
GradCheckResult grad_check(const ScalarClosure& closure, const std::vector<Tensor>& inputs,
                           double step = 1e-5, double tolerance = 1e-4);

}  // namespace stereodepth
