#include "stereodepth/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace stereodepth {

GradCheckResult grad_check(const ScalarClosure& closure, const std::vector<Tensor>& inputs,
                           double step, double tolerance) {
  std::vector<Tensor> leaves = inputs;
  for (auto& t : leaves) {
    if (!t.is_leaf()) throw Error("grad_check: inputs must be leaf tensors");
    t.zero_grad();
  }
  Tensor out = closure(leaves);
  if (out.numel() != 1) {
    throw ShapeError("grad_check: closure output must be scalar, got " + shape_string(out.shape()));
  }
  if (!std::isfinite(out.item())) throw NonFiniteError("grad_check: closure output is not finite");
  out.backward();

  auto eval = [&]() {
    NoGradGuard no_grad;
    const double v = closure(leaves).item();
    if (!std::isfinite(v)) throw NonFiniteError("grad_check: perturbed output is not finite");
    return v;
  };

  GradCheckResult result;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    Tensor& leaf = leaves[t];
    if (!leaf.requires_grad()) continue;
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double plus = eval();
      values[i] = original - step;
      const double minus = eval();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(analytic[i] - numeric) / denom;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.input = t;
        result.index = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  result.passed = result.max_relative_error <= tolerance;
  return result;
}

}  // namespace stereodepth
