#include <doctest.h>

#include <cmath>
#include <limits>

#include "dcsw/errors.hpp"
#include "dcsw/train.hpp"
#include "support.hpp"

using namespace dcsw;
using testing::random_tensor;
using testing::to_vec;

namespace {

TrainConfig tiny_config(TrainingMode mode) {
  TrainConfig c;
  c.generator.feature_filters = {4, 3};
  c.generator.a1_filters = 3;
  c.generator.b1_filters = 2;
  c.generator.b2_filters = 2;
  c.critic.input_size = 8;
  c.critic.filters = {4, 4};
  c.critic.strides = {1, 2};
  c.critic.fc_hidden = 8;
  c.loss.mode = mode;
  c.batch_size = 2;
  c.n_critic = 4;
  c.steps = 4;
  c.seed = 11;
  c.adam.lr = 1e-3;
  return c;
}

std::vector<PatchPair> tiny_data(std::size_t n, std::size_t size = 8) {
  RngStream rng(12, "tiny-data");
  std::vector<PatchPair> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = out[i];
    p.size = size;
    p.slice_id = i;
    for (std::size_t k = 0; k < size * size; ++k) {
      const double clean = 0.3 + 0.2 * std::sin(0.7 * static_cast<double>(k % size) + static_cast<double>(i));
      p.y.push_back(clean);
      p.x.push_back(clean + rng.normal(0.0, 0.05));
    }
  }
  return out;
}

std::vector<std::uint8_t> state_bytes(const TrainState& s, const TrainConfig& c) {
  return encode_checkpoint(encode_train_state(s, c));
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  ParameterStore p;
  p.add("w", Tensor({3}, {1.0, -2.0, 0.5}, true));
  AdamState s = AdamState::for_parameters(p, AdamHyper{});
  for (int i = 0; i < 5; ++i) adam_step(p, {Tensor::zeros({3})}, s);
  CHECK(to_vec(p.get("w")) == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(s.step == 5);
}

TEST_CASE("adam: first step moves by lr against the gradient sign") {
  ParameterStore p;
  p.add("w", Tensor({2}, {1.0, 1.0}, true));
  AdamState s = AdamState::for_parameters(p, AdamHyper{});
  adam_step(p, {Tensor({2}, {0.3, -7.0})}, s);
  CHECK(p.get("w").at(0) == doctest::Approx(1.0 - 1e-4).epsilon(1e-9));
  CHECK(p.get("w").at(1) == doctest::Approx(1.0 + 1e-4).epsilon(1e-9));
}

TEST_CASE("adam: trajectory matches a scalar oracle") {
  // f(θ) = 2(θ − 3)², gradient 4(θ − 3).
  AdamHyper h;
  h.lr = 0.05;
  ParameterStore p;
  p.add("theta", Tensor({1}, {0.0}, true));
  AdamState s = AdamState::for_parameters(p, h);
  double theta = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 10; ++t) {
    const double g = 4.0 * (theta - 3.0);
    m = h.beta1 * m + (1 - h.beta1) * g;
    v = h.beta2 * v + (1 - h.beta2) * g * g;
    const double mh = m / (1 - std::pow(h.beta1, t));
    const double vh = v / (1 - std::pow(h.beta2, t));
    theta -= h.lr * mh / (std::sqrt(vh) + h.epsilon);
    adam_step(p, {Tensor({1}, {4.0 * (p.get("theta").item() - 3.0)})}, s);
    CHECK(std::fabs(p.get("theta").item() - theta) <= 1e-12);
  }
}

TEST_CASE("adam: invalid gradients are rejected before any update") {
  ParameterStore p;
  p.add("a", Tensor({2}, {1.0, 2.0}, true));
  p.add("b", Tensor({1}, {3.0}, true));
  AdamState s = AdamState::for_parameters(p, AdamHyper{});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(p, {Tensor({2}, {0.1, 0.1}), Tensor({1}, {nan})}, s);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }
  CHECK(to_vec(p.get("a")) == std::vector<double>{1.0, 2.0});
  CHECK(s.step == 0);
  CHECK_THROWS_AS(adam_step(p, {Tensor::zeros({3}), Tensor::zeros({1})}, s), ConfigError);
  CHECK_THROWS_AS(adam_step(p, {Tensor::zeros({2})}, s), ConfigError);
}

TEST_CASE("critic step isolation") {
  TrainConfig cfg = tiny_config(TrainingMode::joint);
  TrainState st = init_train_state(cfg);
  const auto data = tiny_data(4);
  const BatchSample batch = draw_batch(data, 2, RngStream(1, "b"));
  const ParameterStore g0 = st.generator.clone();
  const ParameterStore d0 = st.critic->clone();
  const auto rec = train_step_critic(batch, st, cfg);
  CHECK(rec.phase == "critic");
  CHECK(std::isfinite(rec.loss));
  CHECK(st.generator.bitwise_equal(g0));
  CHECK_FALSE(st.critic->bitwise_equal(d0));
}

TEST_CASE("critic step with identical real and fake batches and no penalty") {
  TrainConfig cfg = tiny_config(TrainingMode::joint);
  cfg.loss.gp_weight = 0.0;
  TrainState st = init_train_state(cfg);
  for (auto& v : st.generator.get("nin.w").mutable_values()) v = 0.0;
  for (auto& v : st.generator.get("nin.b").mutable_values()) v = 0.0;
  auto data = tiny_data(2);
  for (auto& p : data) p.y = p.x;
  const ParameterStore d0 = st.critic->clone();
  const auto rec = train_step_critic(draw_batch(data, 2, RngStream(2, "b")), st, cfg);
  CHECK(rec.loss == 0.0);
  CHECK(st.critic->bitwise_equal(d0));
}

TEST_CASE("critic loss decreases on a frozen batch") {
  TrainConfig cfg = tiny_config(TrainingMode::joint);
  TrainState st = init_train_state(cfg);
  const BatchSample batch = draw_batch(tiny_data(4), 4, RngStream(3, "b"));
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) losses.push_back(train_step_critic(batch, st, cfg).loss);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("generator step") {
  SUBCASE("l1-only loss falls on a single patch") {
    TrainConfig cfg = tiny_config(TrainingMode::l1_only);
    TrainState st = init_train_state(cfg);
    CHECK_FALSE(st.critic.has_value());
    const BatchSample batch = draw_batch(tiny_data(1, 16), 1, RngStream(4, "b"));
    std::vector<double> l;
    for (int i = 0; i < 200; ++i) l.push_back(train_step_generator(batch, st, cfg).l1);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 20; ++i) {
      first += l[static_cast<std::size_t>(i)];
      last += l[l.size() - 1 - static_cast<std::size_t>(i)];
    }
    CHECK(last < 0.5 * first);
  }
  SUBCASE("critic untouched") {
    TrainConfig cfg = tiny_config(TrainingMode::joint);
    TrainState st = init_train_state(cfg);
    const ParameterStore d0 = st.critic->clone();
    const ParameterStore g0 = st.generator.clone();
    train_step_generator(draw_batch(tiny_data(4), 2, RngStream(5, "b")), st, cfg);
    CHECK(st.critic->bitwise_equal(d0));
    CHECK_FALSE(st.generator.bitwise_equal(g0));
  }
  SUBCASE("joint with zero L1 weight equals adversarial-only") {
    TrainConfig joint = tiny_config(TrainingMode::joint);
    joint.loss.l1_weight = 0.0;
    TrainConfig adv = tiny_config(TrainingMode::adversarial_only);
    TrainState a = init_train_state(joint);
    TrainState b = init_train_state(adv);
    const BatchSample batch = draw_batch(tiny_data(4), 2, RngStream(6, "b"));
    for (int i = 0; i < 3; ++i) {
      train_step_generator(batch, a, joint);
      train_step_generator(batch, b, adv);
    }
    CHECK(a.generator.bitwise_equal(b.generator));
  }
}

TEST_CASE("train loop schedule") {
  const auto data = tiny_data(4);
  SUBCASE("adversarial") {
    TrainConfig cfg = tiny_config(TrainingMode::joint);
    cfg.steps = 2;
    TrainState st = init_train_state(cfg);
    const auto log = train_loop(data, cfg, st);
    std::size_t critic = 0, gen = 0;
    std::int64_t last_step = -1;
    for (const auto& r : log) {
      (r.phase == "critic" ? critic : gen)++;
      CHECK(r.step >= last_step);
      last_step = r.step;
      CHECK(std::isfinite(r.loss));
    }
    CHECK(critic == 8);
    CHECK(gen == 2);
    CHECK(st.step == 2);
  }
  SUBCASE("l1-only never touches a critic") {
    TrainConfig cfg = tiny_config(TrainingMode::l1_only);
    cfg.steps = 3;
    TrainState st = init_train_state(cfg);
    const auto log = train_loop(data, cfg, st);
    CHECK(log.size() == 3);
    for (const auto& r : log) CHECK(r.phase == "generator");
  }
  SUBCASE("checkpoint cadence") {
    TrainConfig cfg = tiny_config(TrainingMode::l1_only);
    cfg.steps = 5;
    cfg.checkpoint_every = 2;
    TrainState st = init_train_state(cfg);
    std::vector<std::int64_t> at;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](const TrainState& s) { at.push_back(s.step); };
    train_loop(data, cfg, st, hooks);
    CHECK(at == std::vector<std::int64_t>{2, 4, 5});
  }
  SUBCASE("empty dataset") {
    TrainConfig cfg = tiny_config(TrainingMode::l1_only);
    TrainState st = init_train_state(cfg);
    CHECK_THROWS_AS(train_loop({}, cfg, st), DataError);
  }
}

TEST_CASE("training is deterministic and resumable") {
  const auto data = tiny_data(4);
  TrainConfig cfg = tiny_config(TrainingMode::joint);
  cfg.steps = 4;
  TrainState a = init_train_state(cfg);
  TrainState b = init_train_state(cfg);
  train_loop(data, cfg, a);
  train_loop(data, cfg, b);
  const auto full = state_bytes(a, cfg);
  CHECK(full == state_bytes(b, cfg));

  TrainConfig half = cfg;
  half.steps = 2;
  TrainState c = init_train_state(half);
  train_loop(data, half, c);
  const auto dir = testing::scratch_dir("resume");
  save_train_state(c, half, dir / "mid.dcsw");
  TrainState resumed = load_train_state(dir / "mid.dcsw", cfg);
  CHECK(resumed.step == 2);
  train_loop(data, cfg, resumed);
  CHECK(state_bytes(resumed, cfg) == full);
}

TEST_CASE("training checkpoint round trip and rejection") {
  const auto data = tiny_data(2);
  TrainConfig cfg = tiny_config(TrainingMode::joint);
  cfg.steps = 1;
  TrainState st = init_train_state(cfg);
  train_loop(data, cfg, st);
  const auto dir = testing::scratch_dir("train_ckpt");
  save_train_state(st, cfg, dir / "a.dcsw");
  const TrainState back = load_train_state(dir / "a.dcsw", cfg);
  save_train_state(back, cfg, dir / "b.dcsw");
  CHECK(read_file_bytes(dir / "a.dcsw") == read_file_bytes(dir / "b.dcsw"));
  CHECK(back.generator_opt.step == st.generator_opt.step);
  CHECK(back.critic_opt->m == st.critic_opt->m);

  TrainConfig other = cfg;
  other.critic.fc_hidden = 9;
  CHECK_THROWS_AS(load_train_state(dir / "a.dcsw", other), ConfigError);
  TrainConfig l1 = cfg;
  l1.loss.mode = TrainingMode::l1_only;
  CHECK_THROWS_AS(load_train_state(dir / "a.dcsw", l1), ConfigError);

  auto bytes = read_file_bytes(dir / "a.dcsw");
  bytes[1] = '?';
  write_file_bytes(dir / "bad.dcsw", bytes);
  CHECK_THROWS_AS(load_train_state(dir / "bad.dcsw", cfg), DataError);
}

TEST_CASE("non-finite loss aborts before the update") {
  TrainConfig cfg = tiny_config(TrainingMode::l1_only);
  TrainState st = init_train_state(cfg);
  auto data = tiny_data(1);
  data[0].y[3] = std::numeric_limits<double>::quiet_NaN();
  const ParameterStore g0 = st.generator.clone();
  CHECK_THROWS_AS(train_loop(data, cfg, st), NumericalError);
  CHECK(st.generator.bitwise_equal(g0));
  CHECK(st.step == 0);
}

TEST_CASE("batches") {
  const auto data = tiny_data(3);
  const BatchSample b = draw_batch(data, 5, RngStream(9, "b"));
  CHECK(b.x.shape() == Shape{5, 1, 8, 8});
  CHECK(b.epsilon.size() == 5);
  for (double e : b.epsilon) CHECK((e >= 0.0 && e <= 1.0));
  const BatchSample c = draw_batch(data, 5, RngStream(9, "b"));
  CHECK(to_vec(b.x) == to_vec(c.x));
  CHECK(b.epsilon == c.epsilon);
  TrainConfig bad = tiny_config(TrainingMode::joint);
  bad.n_critic = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
