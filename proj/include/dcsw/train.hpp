#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dcsw/checkpoint.hpp"
#include "dcsw/ct.hpp"
#include "dcsw/losses.hpp"
#include "dcsw/model.hpp"
#include "dcsw/optim.hpp"

namespace dcsw {

struct TrainConfig {
  GeneratorConfig generator;
  CriticConfig critic;
  LossConfig loss;
  AdamHyper adam;
  std::size_t n_critic = 4;
  std::size_t batch_size = 16;
  std::int64_t steps = 1000;  // generator steps
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0: only at the end

  void validate() const;
  bool adversarial() const { return loss.mode != TrainingMode::l1_only; }
};

/// One optimizer update, as logged to train.csv.
struct TrainRecord {
  std::int64_t step = 0;
  std::string phase;  // "critic" or "generator"
  double loss = 0.0;
  double l1 = 0.0;
  double gp = 0.0;
  double wall_ms = 0.0;
};

/// Models, optimizer moments and the number of completed generator steps.
/// The critic is absent in l1-only mode.
struct TrainState {
  ParameterStore generator;
  AdamState generator_opt;
  std::optional<ParameterStore> critic;
  std::optional<AdamState> critic_opt;
  std::int64_t step = 0;
};

TrainState init_train_state(const TrainConfig& cfg);

/// Fingerprint of a full training checkpoint: generator and critic
/// architectures.
Fingerprint training_fingerprint(const TrainConfig& cfg);

CheckpointData encode_train_state(const TrainState& state, const TrainConfig& cfg);
/// Throws ConfigError on fingerprint mismatch, DataError on missing entries.
TrainState decode_train_state(const CheckpointData& data, const TrainConfig& cfg);

void save_train_state(const TrainState& state, const TrainConfig& cfg,
                      const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path, const TrainConfig& cfg);

/// Stacks patches into [B,1,P,P] tensors and draws one ε per sample.
BatchSample make_batch(const std::vector<PatchPair>& data, const std::vector<std::size_t>& indices,
                       RngStream& rng);
/// Uniformly drawn (with replacement) batch.
BatchSample draw_batch(const std::vector<PatchPair>& data, std::size_t batch_size,
                       RngStream rng);

/// One Adam step on the critic loss; the generator is only evaluated.
TrainRecord train_step_critic(const BatchSample& batch, TrainState& state,
                              const TrainConfig& cfg);
/// One Adam step on the generator objective for cfg.loss.mode; the critic is
/// only evaluated.
TrainRecord train_step_generator(const BatchSample& batch, TrainState& state,
                                 const TrainConfig& cfg);

struct TrainHooks {
  std::function<void(const TrainRecord&)> on_record;
  /// Called after every `checkpoint_every` generator steps and at the end.
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Runs generator steps state.step .. cfg.steps-1. Each adversarial step is
/// n_critic critic updates followed by one generator update; l1-only mode
/// never touches a critic. Batches come from substreams keyed by step, so
/// resuming from a checkpoint reproduces the uninterrupted trajectory.
/// A non-finite loss throws NumericalError before the offending update.
std::vector<TrainRecord> train_loop(const std::vector<PatchPair>& data, const TrainConfig& cfg,
                                    TrainState& state, const TrainHooks& hooks = {});

}  // namespace dcsw
