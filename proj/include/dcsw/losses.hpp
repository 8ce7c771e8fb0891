#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dcsw/model.hpp"
#include "dcsw/tensor.hpp"

namespace dcsw {

enum class TrainingMode { l1_only, adversarial_only, joint };

std::string to_string(TrainingMode mode);
/// Accepts l1 / l1-only, wgan / adversarial-only, joint.
TrainingMode parse_training_mode(const std::string& text);

struct LossConfig {
  double gp_weight = 10.0;  // λ
  double l1_weight = 50.0;  // λ1
  TrainingMode mode = TrainingMode::joint;

  void validate() const;
};

/// LDCT batch x, NDCT batch y and one interpolation weight per sample.
struct BatchSample {
  Tensor x;
  Tensor y;
  std::vector<double> epsilon;
};

/// Maps a [B,1,H,W] batch to per-sample scores [B].
using Critic = std::function<Tensor(const Tensor&)>;

Critic make_critic(const CriticConfig& cfg, const ParameterStore& params);

/// Mean absolute error over every element.
Tensor l1_loss(const Tensor& gx, const Tensor& y);

/// λ · mean_i (‖∇D(ŷ_i)‖₂ − 1)² with ŷ_i = ε_i·y_i + (1−ε_i)·gx_i. Neither y
/// nor gx receives gradient; the result is differentiable in the critic's
/// parameters.
Tensor gradient_penalty(const Critic& critic, const Tensor& y, const Tensor& gx,
                        const std::vector<double>& epsilon, double gp_weight);

struct CriticLossTerms {
  Tensor total;
  double wasserstein = 0.0;  // mean D(gx) − mean D(y)
  double penalty = 0.0;
};

/// mean D(gx) − mean D(y) + gradient penalty; gx is detached.
CriticLossTerms critic_loss_terms(const Critic& critic, const Tensor& y, const Tensor& gx,
                                  const std::vector<double>& epsilon, double gp_weight);
Tensor critic_loss(const Critic& critic, const Tensor& y, const Tensor& gx,
                   const std::vector<double>& epsilon, double gp_weight);

/// −mean D(gx).
Tensor generator_adversarial_loss(const Critic& critic, const Tensor& gx);

struct GeneratorLossTerms {
  Tensor total;
  double adversarial = 0.0;
  double l1 = 0.0;  // unweighted
};

/// adversarial + λ1·L1 with the term selection given by cfg.mode. The critic
/// may be empty in l1-only mode.
GeneratorLossTerms joint_generator_loss_terms(const Critic& critic, const Tensor& gx,
                                              const Tensor& y, const LossConfig& cfg);
Tensor joint_generator_loss(const Critic& critic, const Tensor& gx, const Tensor& y,
                            const LossConfig& cfg);

}  // namespace dcsw
