#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stereodepth {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown when operand shapes disagree; the message names the offending dimension.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced or consumed by an operation.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

// Dense row-major tensor of doubles with reverse-mode differentiation support.
//
// A Tensor is a cheap shared handle. Values produced by operations are immutable;
// only leaf tensors (parameters, inputs) may be written through mutable_data().
// Images use C x H x W layout, optionally with a leading batch dimension.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Leaf tensors only; writing through an op result would desynchronize the tape.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  bool is_leaf() const;
  std::string_view op_name() const;

  bool has_grad() const;
  // Empty span until a backward pass has reached this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  // Runs the backward sweep from this scalar. Gradients accumulate (+=) into
  // every reachable tensor that requires grad.
  void backward() const;

  // Copy of the values with no graph history.
  Tensor detach() const;

  // Used by operation implementations. Allocates the accumulator on first use.
  std::span<double> grad_accumulator() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op_result(std::string_view, Shape, std::vector<double>,
                               std::vector<Tensor>, std::function<void(std::span<const double>)>);
};

// Creates the output of an operation. The backward closure receives the output
// gradient and must accumulate into its inputs via grad_accumulator(). When no
// input requires grad (or grad recording is disabled) the closure is dropped.
// Throws NonFiniteError when any output value is NaN or Inf.
Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(std::span<const double>)> backward_fn);

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Ordered record of the operations reachable from a root, in execution order.
// backward() replays it in reverse.
class Tape {
 public:
  static Tape collect(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  // Operation names in execution order.
  std::vector<std::string> op_names() const;
  void run_backward() const;

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

}  // namespace stereodepth
