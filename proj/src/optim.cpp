#include "dcsw/optim.hpp"

#include <cmath>

#include "dcsw/errors.hpp"

namespace dcsw {

void AdamHyper::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("adam: learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be positive");
}

AdamState AdamState::for_parameters(const ParameterStore& params, const AdamHyper& hyper) {
  hyper.validate();
  AdamState s;
  s.hyper = hyper;
  for (const auto& [name, t] : params.entries()) {
    s.m.emplace_back(t.numel(), 0.0);
    s.v.emplace_back(t.numel(), 0.0);
  }
  return s;
}

void adam_step(ParameterStore& params, const std::vector<Tensor>& grads, AdamState& state) {
  const auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size() ||
      state.v.size() != entries.size()) {
    throw ConfigError("adam: " + std::to_string(grads.size()) + " gradients and " +
                      std::to_string(state.m.size()) + " moment sets for " +
                      std::to_string(entries.size()) + " parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, p] = entries[i];
    if (grads[i].shape() != p.shape() || state.m[i].size() != p.numel() ||
        state.v[i].size() != p.numel()) {
      throw ConfigError("adam: shape mismatch for parameter '" + name + "'");
    }
    if (!all_finite(grads[i].values())) {
      throw NumericalError("adam: non-finite gradient for parameter '" + name + "'");
    }
  }

  const AdamHyper& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto values = params.get(entries[i].first).mutable_values();
    auto g = grads[i].values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * g[k];
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      values[k] -= h.lr * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
  }
}

}  // namespace dcsw
