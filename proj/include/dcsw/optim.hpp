#pragma once

#include <cstdint>
#include <vector>

#include "dcsw/model.hpp"

namespace dcsw {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double epsilon = 1e-8;

  void validate() const;
};

/// First/second moments mirroring a ParameterStore, plus the step counter.
struct AdamState {
  AdamHyper hyper;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState for_parameters(const ParameterStore& params, const AdamHyper& hyper);
};

/// One bias-corrected Adam update, in place. Gradients are validated before
/// anything is modified: a non-finite entry throws NumericalError naming the
/// parameter and leaves parameters and state untouched.
void adam_step(ParameterStore& params, const std::vector<Tensor>& grads, AdamState& state);

}  // namespace dcsw
