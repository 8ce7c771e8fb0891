#include "dcsw/train.hpp"

#include <chrono>
#include <cmath>

#include "dcsw/errors.hpp"

namespace dcsw {

namespace {

constexpr const char* kGen = "G/";
constexpr const char* kCritic = "D/";

Tensor step_tensor(std::int64_t step) {
  return Tensor({1}, {static_cast<double>(step)});
}

void append_store(CheckpointData& data, const std::string& prefix, const ParameterStore& store) {
  for (const auto& [name, t] : store.entries()) data.entries.emplace_back(prefix + name, t);
}

void append_adam(CheckpointData& data, const std::string& prefix, const ParameterStore& store,
                 const AdamState& opt) {
  const auto& entries = store.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Shape& shape = entries[i].second.shape();
    data.entries.emplace_back(prefix + "m/" + entries[i].first, Tensor(shape, opt.m[i]));
    data.entries.emplace_back(prefix + "v/" + entries[i].first, Tensor(shape, opt.v[i]));
  }
  data.entries.emplace_back(prefix + "step", step_tensor(opt.step));
}

class EntryIndex {
 public:
  explicit EntryIndex(const CheckpointData& data) {
    for (const auto& [name, t] : data.entries) map_.emplace(name, t);
  }
  const Tensor& need(const std::string& name, const Shape& shape) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw DataError("checkpoint lacks entry '" + name + "'");
    if (it->second.shape() != shape) {
      throw DataError("checkpoint entry '" + name + "' has shape " +
                      shape_str(it->second.shape()) + ", expected " + shape_str(shape));
    }
    return it->second;
  }
  std::int64_t step(const std::string& name) const {
    const double v = need(name, {1}).item();
    if (!(v >= 0.0) || v != std::floor(v)) throw DataError("checkpoint step '" + name + "' invalid");
    return static_cast<std::int64_t>(v);
  }

 private:
  std::unordered_map<std::string, Tensor> map_;
};

ParameterStore restore_store(const EntryIndex& index, const std::string& prefix,
                             const ParameterLayout& layout, const Fingerprint& fp) {
  ParameterStore store(fp);
  for (const auto& [name, shape] : layout) {
    store.add(name, index.need(prefix + name, shape).clone(true));
  }
  return store;
}

AdamState restore_adam(const EntryIndex& index, const std::string& prefix,
                       const ParameterLayout& layout, const AdamHyper& hyper) {
  AdamState opt;
  opt.hyper = hyper;
  for (const auto& [name, shape] : layout) {
    auto m = index.need(prefix + "m/" + name, shape).values();
    auto v = index.need(prefix + "v/" + name, shape).values();
    opt.m.emplace_back(m.begin(), m.end());
    opt.v.emplace_back(v.begin(), v.end());
  }
  opt.step = index.step(prefix + "step");
  return opt;
}

void require_finite(double value, const char* what, std::int64_t step) {
  if (!std::isfinite(value)) {
    throw NumericalError(std::string("non-finite ") + what + " at generator step " +
                         std::to_string(step));
  }
}

}  // namespace

void TrainConfig::validate() const {
  generator.validate();
  loss.validate();
  adam.validate();
  if (n_critic < 1) throw ConfigError("n_critic must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (steps < 0) throw ConfigError("step count must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint cadence must be >= 0");
  if (adversarial()) critic.validate();
}

TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState state;
  state.generator = build_generator(cfg.generator, RngStream(cfg.seed, "init/generator"));
  state.generator_opt = AdamState::for_parameters(state.generator, cfg.adam);
  if (cfg.adversarial()) {
    state.critic = build_critic(cfg.critic, RngStream(cfg.seed, "init/critic"));
    state.critic_opt = AdamState::for_parameters(*state.critic, cfg.adam);
  }
  return state;
}

Fingerprint training_fingerprint(const TrainConfig& cfg) {
  return sha256("train/v1|" + cfg.generator.canonical() + "|" +
                (cfg.adversarial() ? cfg.critic.canonical() : std::string("critic/none")));
}

CheckpointData encode_train_state(const TrainState& state, const TrainConfig& cfg) {
  CheckpointData data;
  data.fingerprint = training_fingerprint(cfg);
  append_store(data, kGen, state.generator);
  append_adam(data, "optG/", state.generator, state.generator_opt);
  if (state.critic) {
    append_store(data, kCritic, *state.critic);
    append_adam(data, "optD/", *state.critic, *state.critic_opt);
  }
  data.entries.emplace_back("train/step", step_tensor(state.step));
  return data;
}

TrainState decode_train_state(const CheckpointData& data, const TrainConfig& cfg) {
  if (data.fingerprint != training_fingerprint(cfg)) {
    throw ConfigError("training checkpoint fingerprint " + to_hex(data.fingerprint) +
                      " does not match configuration " + to_hex(training_fingerprint(cfg)));
  }
  const EntryIndex index(data);
  TrainState state;
  const auto gen_layout = generator_layout(cfg.generator);
  state.generator = restore_store(index, kGen, gen_layout, cfg.generator.fingerprint());
  state.generator_opt = restore_adam(index, "optG/", gen_layout, cfg.adam);
  if (cfg.adversarial()) {
    const auto critic_layout_ = critic_layout(cfg.critic);
    state.critic = restore_store(index, kCritic, critic_layout_, cfg.critic.fingerprint());
    state.critic_opt = restore_adam(index, "optD/", critic_layout_, cfg.adam);
  }
  state.step = index.step("train/step");
  return state;
}

void save_train_state(const TrainState& state, const TrainConfig& cfg,
                      const std::filesystem::path& path) {
  write_checkpoint(path, encode_train_state(state, cfg));
}

TrainState load_train_state(const std::filesystem::path& path, const TrainConfig& cfg) {
  return decode_train_state(read_checkpoint(path), cfg);
}

BatchSample make_batch(const std::vector<PatchPair>& data, const std::vector<std::size_t>& indices,
                       RngStream& rng) {
  if (data.empty() || indices.empty()) throw DataError("cannot build a batch from no patches");
  const std::size_t size = data[indices.front()].size;
  const std::size_t plane = size * size;
  std::vector<double> x(indices.size() * plane), y(indices.size() * plane);
  BatchSample batch;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const PatchPair& p = data.at(indices[b]);
    if (p.size != size) throw DataError("patches of different sizes in one batch");
    std::copy(p.x.begin(), p.x.end(), x.begin() + static_cast<std::ptrdiff_t>(b * plane));
    std::copy(p.y.begin(), p.y.end(), y.begin() + static_cast<std::ptrdiff_t>(b * plane));
    batch.epsilon.push_back(rng.uniform());
  }
  const Shape shape{indices.size(), 1, size, size};
  batch.x = Tensor(shape, std::move(x));
  batch.y = Tensor(shape, std::move(y));
  return batch;
}

BatchSample draw_batch(const std::vector<PatchPair>& data, std::size_t batch_size, RngStream rng) {
  if (data.empty()) throw DataError("empty dataset");
  std::vector<std::size_t> indices(batch_size);
  for (auto& i : indices) {
    i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1));
  }
  return make_batch(data, indices, rng);
}

TrainRecord train_step_critic(const BatchSample& batch, TrainState& state,
                              const TrainConfig& cfg) {
  if (!state.critic || !state.critic_opt) throw UsageError("critic step without a critic");
  Tensor fake;
  {
    NoGradGuard no_grad;
    fake = generator_forward(cfg.generator, state.generator, batch.x);
  }
  const Critic critic = make_critic(cfg.critic, *state.critic);
  const CriticLossTerms terms =
      critic_loss_terms(critic, batch.y, fake, batch.epsilon, cfg.loss.gp_weight);
  require_finite(terms.total.item(), "critic loss", state.step);
  const auto grads = grad(terms.total, state.critic->tensors());
  adam_step(*state.critic, grads, *state.critic_opt);
  TrainRecord rec;
  rec.step = state.step;
  rec.phase = "critic";
  rec.loss = terms.total.item();
  rec.gp = terms.penalty;
  return rec;
}

TrainRecord train_step_generator(const BatchSample& batch, TrainState& state,
                                 const TrainConfig& cfg) {
  const Tensor denoised = generator_forward(cfg.generator, state.generator, batch.x);
  Critic critic;
  if (cfg.adversarial()) {
    if (!state.critic) throw UsageError("adversarial generator step without a critic");
    critic = make_critic(cfg.critic, *state.critic);
  }
  const GeneratorLossTerms terms = joint_generator_loss_terms(critic, denoised, batch.y, cfg.loss);
  require_finite(terms.total.item(), "generator loss", state.step);
  const auto grads = grad(terms.total, state.generator.tensors());
  adam_step(state.generator, grads, state.generator_opt);
  TrainRecord rec;
  rec.step = state.step;
  rec.phase = "generator";
  rec.loss = terms.total.item();
  rec.l1 = terms.l1;
  return rec;
}

std::vector<TrainRecord> train_loop(const std::vector<PatchPair>& data, const TrainConfig& cfg,
                                    TrainState& state, const TrainHooks& hooks) {
  cfg.validate();
  if (data.empty()) throw DataError("training dataset is empty");
  if (cfg.adversarial() && !state.critic) throw UsageError("adversarial mode without a critic");
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
  };
  std::vector<TrainRecord> log;
  const auto emit = [&](TrainRecord rec) {
    rec.wall_ms = elapsed_ms();
    if (hooks.on_record) hooks.on_record(rec);
    log.push_back(std::move(rec));
  };
  const RngStream root(cfg.seed, "train");
  while (state.step < cfg.steps) {
    const std::string step_key = std::to_string(state.step);
    if (cfg.adversarial()) {
      for (std::size_t i = 0; i < cfg.n_critic; ++i) {
        const RngStream rng = root.substream("critic/" + step_key + "/" + std::to_string(i));
        emit(train_step_critic(draw_batch(data, cfg.batch_size, rng), state, cfg));
      }
    }
    const RngStream rng = root.substream("generator/" + step_key);
    emit(train_step_generator(draw_batch(data, cfg.batch_size, rng), state, cfg));
    state.step += 1;
    const bool cadence = cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0;
    if (hooks.on_checkpoint && (cadence || state.step == cfg.steps)) hooks.on_checkpoint(state);
  }
  return log;
}

}  // namespace dcsw
