#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dcsw {

using Shape = std::vector<std::size_t>;
using NodeId = std::uint64_t;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

/// Computes the gradient contribution for each input of a node given the
/// gradient of its output. `needed[i]` is false for inputs whose gradient is
/// not required; the function may return an undefined Tensor for those.
using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needed)>;

struct Node {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  NodeId id = 0;
  std::string op = "leaf";
  std::vector<Tensor> inputs;
  BackwardFn backward;
  // False when `backward` computes raw values instead of recording
  // differentiable ops; such nodes block gradient_as_graph.
  bool differentiable_backward = true;
};

}  // namespace detail

/// Dense double-precision N-d array that participates in a dynamically
/// recorded computation graph. Copies share storage; the shape is fixed at
/// creation.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  NodeId id() const;
  const std::string& op() const;

  std::span<const double> values() const;
  /// Writable storage. Only valid on leaves; used by optimizers and tests.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  bool is_leaf() const;
  /// Marks a leaf as a differentiable parameter.
  Tensor& set_requires_grad(bool flag);

  /// Same values, cut from the graph.
  Tensor detach() const;
  /// Deep copy of the values as a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  const detail::Node* node() const { return node_.get(); }

  static Tensor make_result(Shape shape, std::vector<double> values, std::string op,
                            std::vector<Tensor> inputs, detail::BackwardFn backward,
                            bool differentiable_backward = true);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// True while ops record graph nodes on this thread.
bool grad_mode_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

// ---------------------------------------------------------------------------
// Primitive ops. Every op below except `map_unary` has a backward expressed
// in these same ops, so gradients can themselves be differentiated.

enum class Padding { same, valid };

/// Explicit geometry of a 2-D convolution. Built by `conv_geometry`.
struct ConvGeometry {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad_top = 0;
  std::size_t pad_left = 0;
  std::size_t in_h = 0, in_w = 0;
  std::size_t out_h = 0, out_w = 0;
};

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel,
                           std::size_t stride, Padding padding);

/// Cross-correlation (no kernel flip) of x[B,Cin,H,W] with w[Cout,Cin,k,k],
/// plus per-channel bias b[Cout] (pass an undefined Tensor for no bias).
/// `same` zero-pads so that the output extent is ceil(H/stride).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              Padding padding);

/// Raw bilinear pieces of conv2d. Exposed for tests and for the backward
/// passes of conv2d itself.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const ConvGeometry& g);
/// Adjoint of conv2d_forward with respect to its input.
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& w, const ConvGeometry& g);
/// Adjoint of conv2d_forward with respect to its weights.
Tensor conv2d_weight_grad(const Tensor& x, const Tensor& grad_out, const ConvGeometry& g);

Tensor prelu(const Tensor& x, const Tensor& slope);
Tensor leaky_relu(const Tensor& x, double slope);

Tensor concat_channels(const std::vector<Tensor>& inputs);
Tensor slice_channels(const Tensor& x, std::size_t start, std::size_t count);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);
Tensor neg(const Tensor& a);
/// |a| with subgradient 0 at 0.
Tensor abs(const Tensor& a);
/// 1/a, defined as 0 where a == 0.
Tensor safe_reciprocal(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// [B, ...] -> [B]: sum over all non-batch axes.
Tensor sum_per_sample(const Tensor& a);
/// [B, ...] -> [B]: sqrt of the per-sample sum of squares. The gradient at a
/// zero-norm sample is taken as 0.
Tensor l2_norm_per_sample(const Tensor& a);
/// [B,C,H,W] -> [C]
Tensor sum_channels(const Tensor& a);

/// Scalar -> shape.
Tensor broadcast_scalar(const Tensor& s, const Shape& shape);
/// [B] -> shape with leading extent B.
Tensor broadcast_per_sample(const Tensor& v, const Shape& shape);
/// [C] -> [B,C,H,W].
Tensor broadcast_channels(const Tensor& v, const Shape& shape);
/// Per-sample scalars times a batch: out[b,...] = s[b] * x[b,...].
Tensor scale_per_sample(const Tensor& x, const Tensor& s);

Tensor reshape(const Tensor& a, const Shape& shape);

/// Elementwise f with derivative df. Its backward is computed numerically
/// from df and is not itself differentiable.
Tensor map_unary(const Tensor& a, const std::function<double(double)>& f,
                 const std::function<double(double)>& df, const std::string& name);

// ---------------------------------------------------------------------------
// Reverse-mode differentiation.

/// Gradients of scalar `output` with respect to each of `wrt`. Inputs that do
/// not influence `output` receive zeros. With `create_graph`, the returned
/// tensors are graph nodes that can be differentiated again.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt,
                         bool create_graph = false);

/// Gradient of `output` for every leaf that requires grad, keyed by node id.
std::unordered_map<NodeId, Tensor> backward(const Tensor& output);

/// d(scalar)/d(wrt) as a differentiable graph node (second-order support).
Tensor gradient_as_graph(const Tensor& scalar, const Tensor& wrt);

/// One entry per node reachable from a root, inputs before consumers.
struct GraphEntry {
  NodeId id;
  std::string op;
  std::vector<NodeId> inputs;
  Shape shape;
};

/// Topologically ordered record of the graph feeding `root`.
std::vector<GraphEntry> trace_graph(const Tensor& root);

bool all_finite(std::span<const double> values);

}  // namespace dcsw
