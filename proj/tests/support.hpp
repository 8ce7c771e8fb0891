#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dcsw/rng.hpp"
#include "dcsw/tensor.hpp"

namespace testing {

using dcsw::Shape;
using dcsw::Tensor;

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Uniform values in [lo, hi); with `min_abs` > 0, values closer than that to
/// zero are redrawn so finite differences stay off kinks.
inline Tensor random_tensor(const Shape& shape, dcsw::RngStream& rng, double lo = -1.0,
                            double hi = 1.0, double min_abs = 0.0, bool requires_grad = true) {
  std::vector<double> v(dcsw::shape_numel(shape));
  for (auto& x : v) {
    do {
      x = rng.uniform(lo, hi);
    } while (std::fabs(x) < min_abs);
  }
  return Tensor(shape, std::move(v), requires_grad);
}

inline std::vector<double> to_vec(const Tensor& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

/// ‖a − b‖₂ / max(‖a‖₂, ‖b‖₂), 0 when both vanish.
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? std::sqrt(d) : std::sqrt(d) / scale;
}

/// Central differences of f with respect to every element of inputs[which].
inline std::vector<double> numeric_gradient(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                            std::size_t which, double h = 1e-5) {
  dcsw::NoGradGuard no_grad;
  std::vector<double> base = to_vec(inputs[which]);
  std::vector<double> g(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto eval = [&](double delta) {
      std::vector<double> v = base;
      v[i] += delta;
      std::vector<Tensor> args = inputs;
      args[which] = Tensor(inputs[which].shape(), std::move(v));
      return f(args).item();
    };
    g[i] = (eval(h) - eval(-h)) / (2.0 * h);
  }
  return g;
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over all inputs.
inline double gradient_error(const ScalarFn& f, const std::vector<Tensor>& inputs,
                             double h = 1e-5) {
  const auto analytic = dcsw::grad(f(inputs), inputs);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    worst = std::max(worst, rel_err(to_vec(analytic[i]), numeric_gradient(f, inputs, i, h)));
  }
  return worst;
}

/// Second-order check: the scalar s(x) = Σ r ⊙ ∇f(x), built with the gradient
/// kept as a graph, is differentiated again and compared with central
/// differences of s.
inline double second_order_error(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                 dcsw::RngStream& rng, double h = 1e-5) {
  std::vector<Tensor> weights;
  for (const auto& in : inputs) weights.push_back(random_tensor(in.shape(), rng, -1, 1, 0, false));
  const ScalarFn s = [&](const std::vector<Tensor>& args) {
    dcsw::EnableGradGuard enable;
    std::vector<Tensor> leaves;
    for (const auto& a : args) leaves.push_back(a.clone(true));
    const auto g = dcsw::grad(f(leaves), leaves, true);
    Tensor total = dcsw::Tensor::scalar(0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      total = dcsw::add(total, dcsw::sum(dcsw::mul(g[i], weights[i])));
    }
    return total;
  };
  // Analytic: differentiate s through the recorded gradient graph.
  std::vector<Tensor> leaves;
  for (const auto& a : inputs) leaves.push_back(a.clone(true));
  const auto g = dcsw::grad(f(leaves), leaves, true);
  Tensor total = dcsw::Tensor::scalar(0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    total = dcsw::add(total, dcsw::sum(dcsw::mul(g[i], weights[i])));
  }
  const auto analytic = dcsw::grad(total, leaves);
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    worst = std::max(worst, rel_err(to_vec(analytic[i]), numeric_gradient(s, inputs, i, h)));
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dcsw_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
