#include "dcsw/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "dcsw/errors.hpp"

namespace dcsw {

namespace {

std::atomic<NodeId> next_node_id{1};
thread_local bool grad_mode = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw ConfigError("tensor of shape " + shape_str(shape) + " given " +
                      std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(new_node(std::move(shape), std::move(values))) {
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw UsageError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->values.size(); }
NodeId Tensor::id() const { return node_->id; }
const std::string& Tensor::op() const { return node_->op; }
std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::mutable_values() {
  if (!node_->inputs.empty()) throw UsageError("mutable_values() on a non-leaf tensor");
  return node_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->inputs.empty(); }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw UsageError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
  return *this;
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->values = node_->values;
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(node));
}

Tensor Tensor::clone(bool requires_grad) const {
  Tensor t = detach();
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::string op,
                           std::vector<Tensor> inputs, detail::BackwardFn backward,
                           bool differentiable_backward) {
  auto node = new_node(std::move(shape), std::move(values));
  node->op = std::move(op);
  bool track = false;
  if (grad_mode) {
    for (const auto& in : inputs) track = track || (in.defined() && in.requires_grad());
  }
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    node->differentiable_backward = differentiable_backward;
  }
  return Tensor(std::move(node));
}

bool grad_mode_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

EnableGradGuard::EnableGradGuard() : previous_(grad_mode) { grad_mode = true; }
EnableGradGuard::~EnableGradGuard() { grad_mode = previous_; }

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace dcsw
