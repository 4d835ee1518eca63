#include "stereodepth/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace stereodepth {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t sequence = 0;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(std::span<const double>)> backward_fn;
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_sequence{0};
thread_local bool t_grad_enabled = true;

void require_finite(std::string_view op, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NonFiniteError(std::string(op) + ": non-finite value at flat index " +
                           std::to_string(i));
    }
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                     shape_string(shape));
  }
  require_finite("tensor", values);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape()));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw Error("mutable_data: '" + node_->op + "' is not a leaf tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape()) + " is not scalar");
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->op == "leaf"; }
std::string_view Tensor::op_name() const { return node_->op; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() { node_->grad.clear(); }

std::span<double> Tensor::grad_accumulator() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward: root must be scalar, got " + shape_string(shape()));
  }
  if (!requires_grad()) throw Error("backward: root does not require grad");
  auto tape = Tape::collect(*this);
  grad_accumulator()[0] += 1.0;
  tape.run_backward();
}

Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs,
                      std::function<void(std::span<const double>)> backward_fn) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError(std::string(op) + ": produced " + std::to_string(values.size()) +
                     " values for shape " + shape_string(shape));
  }
  require_finite(op, values);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->op = std::string(op);
  node->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  if (t_grad_enabled) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    for (auto& in : inputs) {
      if (in.defined() && in.requires_grad()) node->parents.push_back(in.node());
    }
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tape Tape::collect(const Tensor& root) {
  Tape tape;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{root.node()};
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    if (!node->requires_grad || !seen.insert(node.get()).second) continue;
    for (const auto& p : node->parents) stack.push_back(p);
    tape.nodes_.push_back(std::move(node));
  }
  // Sequence numbers are assigned at creation, so this is execution order.
  std::sort(tape.nodes_.begin(), tape.nodes_.end(),
            [](const auto& a, const auto& b) { return a->sequence < b->sequence; });
  return tape;
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.push_back(n->op);
  return names;
}

void Tape::run_backward() const {
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const auto& node = *it;
    if (node->backward_fn && !node->grad.empty()) {
      require_finite(node->op + " (gradient)", node->grad);
      node->backward_fn(node->grad);
    }
  }
}

}  // namespace stereodepth
