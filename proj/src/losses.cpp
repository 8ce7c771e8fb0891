#include "dcsw/losses.hpp"

#include <cmath>

#include "dcsw/errors.hpp"

namespace dcsw {

std::string to_string(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::l1_only:
      return "l1";
    case TrainingMode::adversarial_only:
      return "wgan";
    case TrainingMode::joint:
      return "joint";
  }
  return "?";
}

TrainingMode parse_training_mode(const std::string& text) {
  if (text == "l1" || text == "l1-only") return TrainingMode::l1_only;
  if (text == "wgan" || text == "adversarial-only") return TrainingMode::adversarial_only;
  if (text == "joint") return TrainingMode::joint;
  throw ConfigError("unknown training mode '" + text + "' (expected l1, wgan or joint)");
}

void LossConfig::validate() const {
  if (!(gp_weight >= 0.0) || !std::isfinite(gp_weight)) {
    throw ConfigError("gradient-penalty weight must be finite and >= 0");
  }
  if (!(l1_weight >= 0.0) || !std::isfinite(l1_weight)) {
    throw ConfigError("L1 weight must be finite and >= 0");
  }
}

Critic make_critic(const CriticConfig& cfg, const ParameterStore& params) {
  return [&cfg, &params](const Tensor& v) { return critic_forward(cfg, params, v); };
}

Tensor l1_loss(const Tensor& gx, const Tensor& y) {
  if (gx.shape() != y.shape()) {
    throw ConfigError("l1_loss: shape mismatch " + shape_str(gx.shape()) + " vs " +
                      shape_str(y.shape()));
  }
  return mean(abs(sub(gx, y)));
}

Tensor gradient_penalty(const Critic& critic, const Tensor& y, const Tensor& gx,
                        const std::vector<double>& epsilon, double gp_weight) {
  if (y.shape() != gx.shape()) {
    throw ConfigError("gradient_penalty: shape mismatch " + shape_str(y.shape()) + " vs " +
                      shape_str(gx.shape()));
  }
  const std::size_t batch = y.dim(0);
  if (epsilon.size() != batch) {
    throw ConfigError("gradient_penalty: " + std::to_string(epsilon.size()) +
                      " interpolation weights for batch of " + std::to_string(batch));
  }
  const std::size_t per = y.numel() / batch;
  std::vector<double> mixed(y.numel());
  auto yv = y.values();
  auto gv = gx.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const double e = epsilon[b];
    if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("gradient_penalty: epsilon outside [0,1]");
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t k = b * per + i;
      mixed[k] = e * yv[k] + (1.0 - e) * gv[k];
    }
  }
  Tensor interpolated(y.shape(), std::move(mixed), /*requires_grad=*/true);
  const Tensor input_grad = gradient_as_graph(sum(critic(interpolated)), interpolated);
  const Tensor deviation = add_scalar(l2_norm_per_sample(input_grad), -1.0);
  return scale(mean(mul(deviation, deviation)), gp_weight);
}

CriticLossTerms critic_loss_terms(const Critic& critic, const Tensor& y, const Tensor& gx,
                                  const std::vector<double>& epsilon, double gp_weight) {
  const Tensor fake = gx.detach();
  const Tensor wasserstein = sub(mean(critic(fake)), mean(critic(y)));
  const Tensor penalty = gradient_penalty(critic, y, fake, epsilon, gp_weight);
  return {add(wasserstein, penalty), wasserstein.item(), penalty.item()};
}

Tensor critic_loss(const Critic& critic, const Tensor& y, const Tensor& gx,
                   const std::vector<double>& epsilon, double gp_weight) {
  return critic_loss_terms(critic, y, gx, epsilon, gp_weight).total;
}

Tensor generator_adversarial_loss(const Critic& critic, const Tensor& gx) {
  return neg(mean(critic(gx)));
}

GeneratorLossTerms joint_generator_loss_terms(const Critic& critic, const Tensor& gx,
                                              const Tensor& y, const LossConfig& cfg) {
  cfg.validate();
  GeneratorLossTerms terms;
  Tensor adversarial;
  if (cfg.mode != TrainingMode::l1_only) {
    if (!critic) throw UsageError("adversarial loss requested without a critic");
    adversarial = generator_adversarial_loss(critic, gx);
    terms.adversarial = adversarial.item();
  }
  Tensor l1;
  if (cfg.mode != TrainingMode::adversarial_only) {
    l1 = l1_loss(gx, y);
    terms.l1 = l1.item();
  }
  switch (cfg.mode) {
    case TrainingMode::l1_only:
      terms.total = scale(l1, cfg.l1_weight);
      break;
    case TrainingMode::adversarial_only:
      terms.total = adversarial;
      break;
    case TrainingMode::joint:
      // λ1 = 0 leaves the graph of the adversarial-only objective untouched.
      terms.total = cfg.l1_weight == 0.0 ? adversarial : add(adversarial, scale(l1, cfg.l1_weight));
      break;
  }
  return terms;
}

Tensor joint_generator_loss(const Critic& critic, const Tensor& gx, const Tensor& y,
                            const LossConfig& cfg) {
  return joint_generator_loss_terms(critic, gx, y, cfg).total;
}

}  // namespace dcsw
