#include <doctest.h>

#include <cmath>

#include "dcsw/errors.hpp"
#include "dcsw/tensor.hpp"
#include "op_cases.hpp"
#include "support.hpp"

using namespace dcsw;
using testing::random_tensor;
using testing::to_vec;

namespace {

// Zero-padded cross-correlation by direct summation, padding placed as
// floor(total/2) before and the rest after.
std::vector<double> direct_conv(const Tensor& x, const Tensor& w, const std::vector<double>& bias,
                                std::size_t stride, bool same) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), k = w.dim(2);
  std::size_t oh, ow, pt = 0, pl = 0;
  if (same) {
    oh = (H + stride - 1) / stride;
    ow = (W + stride - 1) / stride;
    const long th = std::max<long>(0, static_cast<long>((oh - 1) * stride + k) - static_cast<long>(H));
    const long tw = std::max<long>(0, static_cast<long>((ow - 1) * stride + k) - static_cast<long>(W));
    pt = static_cast<std::size_t>(th / 2);
    pl = static_cast<std::size_t>(tw / 2);
  } else {
    oh = (H - k) / stride + 1;
    ow = (W - k) / stride + 1;
  }
  std::vector<double> out(B * O * oh * ow, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pt);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pl);
                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                acc += x.at(((b * C + c) * H + static_cast<std::size_t>(r)) * W + static_cast<std::size_t>(q)) *
                       w.at(((o * C + c) * k + u) * k + v);
              }
          out[((b * O + o) * oh + i) * ow + j] = acc;
        }
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv2d with a unit 1x1 kernel is the identity") {
  RngStream rng(1, "conv-id");
  const Tensor x = random_tensor({1, 1, 6, 5}, rng, -1, 1, 0, false);
  const Tensor y = conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, Padding::same);
  CHECK(to_vec(y) == to_vec(x));
}

TEST_CASE("conv2d averaging a constant image") {
  const Tensor x = Tensor::full({1, 1, 6, 6}, 0.37);
  const Tensor y = conv2d(x, Tensor::full({1, 1, 3, 3}, 1.0 / 9.0), Tensor::zeros({1}), 1, Padding::valid);
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  for (double v : y.values()) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
}

TEST_CASE("conv2d matches direct summation") {
  RngStream rng(2, "conv-oracle");
  SUBCASE("single channel 4x4, 3x3 same") {
    const Tensor x = random_tensor({1, 1, 4, 4}, rng, -1, 1, 0, false);
    const Tensor w = random_tensor({1, 1, 3, 3}, rng, -1, 1, 0, false);
    const Tensor y = conv2d(x, w, Tensor(), 1, Padding::same);
    CHECK(max_abs_diff(to_vec(y), direct_conv(x, w, {}, 1, true)) < 1e-14);
  }
  SUBCASE("multi-channel, bias, stride 2, odd extents") {
    const Tensor x = random_tensor({2, 3, 7, 6}, rng, -1, 1, 0, false);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng, -1, 1, 0, false);
    const Tensor b = random_tensor({4}, rng, -1, 1, 0, false);
    const Tensor y = conv2d(x, w, b, 2, Padding::same);
    CHECK(y.shape() == Shape{2, 4, 4, 3});
    CHECK(max_abs_diff(to_vec(y), direct_conv(x, w, to_vec(b), 2, true)) < 1e-13);
  }
  SUBCASE("valid, 5x5 kernel") {
    const Tensor x = random_tensor({1, 2, 9, 8}, rng, -1, 1, 0, false);
    const Tensor w = random_tensor({3, 2, 5, 5}, rng, -1, 1, 0, false);
    const Tensor y = conv2d(x, w, Tensor(), 1, Padding::valid);
    CHECK(max_abs_diff(to_vec(y), direct_conv(x, w, {}, 1, false)) < 1e-13);
  }
}

TEST_CASE("conv2d rejects mismatched shapes") {
  const Tensor x = Tensor::zeros({1, 2, 5, 5});
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor(), 1, Padding::same), ConfigError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({2}), 1, Padding::same), ConfigError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 2, 7, 7}), Tensor(), 1, Padding::valid), ConfigError);
}

TEST_CASE("conv2d is linear in its input") {
  RngStream rng(3, "linear");
  const Tensor w = random_tensor({3, 2, 3, 3}, rng, -1, 1, 0, false);
  const Tensor x1 = random_tensor({2, 2, 7, 7}, rng, -1, 1, 0, false);
  const Tensor x2 = random_tensor({2, 2, 7, 7}, rng, -1, 1, 0, false);
  const double a = 0.7, b = -1.9;
  const Tensor lhs = conv2d(add(scale(x1, a), scale(x2, b)), w, Tensor(), 1, Padding::same);
  const Tensor rhs = add(scale(conv2d(x1, w, Tensor(), 1, Padding::same), a),
                         scale(conv2d(x2, w, Tensor(), 1, Padding::same), b));
  CHECK(max_abs_diff(to_vec(lhs), to_vec(rhs)) <= 1e-12);
}

TEST_CASE("conv2d same padding is translation equivariant on the interior") {
  RngStream rng(4, "shift");
  const std::size_t n = 10;
  const Tensor w = random_tensor({1, 1, 3, 3}, rng, -1, 1, 0, false);
  const Tensor x = random_tensor({1, 1, n, n}, rng, -1, 1, 0, false);
  std::vector<double> shifted(n * n, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 1; c < n; ++c) shifted[r * n + c] = x.at(r * n + c - 1);
  const Tensor y = conv2d(x, w, Tensor(), 1, Padding::same);
  const Tensor ys = conv2d(Tensor({1, 1, n, n}, shifted), w, Tensor(), 1, Padding::same);
  double worst = 0.0;
  for (std::size_t r = 1; r + 1 < n; ++r)
    for (std::size_t c = 2; c + 1 < n; ++c)
      worst = std::max(worst, std::fabs(ys.at(r * n + c) - y.at(r * n + c - 1)));
  CHECK(worst <= 1e-12);
}

TEST_CASE("activation definitions") {
  const Tensor x({3}, {-2.0, 0.0, 3.0});
  const Tensor p = prelu(reshape(x, {1, 1, 1, 3}), Tensor({1}, {0.25}));
  CHECK(p.at(0) == -0.5);
  CHECK(p.at(2) == 3.0);
  const Tensor l = leaky_relu(x, 0.2);
  CHECK(l.at(2) == 3.0);
  CHECK(l.at(0) == doctest::Approx(-0.4));
}

TEST_CASE("concat_channels") {
  RngStream rng(5, "concat");
  const Tensor a = random_tensor({2, 3, 2, 2}, rng, -1, 1, 0, false);
  const Tensor b = random_tensor({2, 5, 2, 2}, rng, -1, 1, 0, false);
  CHECK(to_vec(concat_channels({a})) == to_vec(a));
  const Tensor c = concat_channels({a, b});
  CHECK(c.shape() == Shape{2, 8, 2, 2});
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 12; ++i) CHECK(c.at(s * 32 + i) == a.at(s * 12 + i));
  CHECK_THROWS_AS(concat_channels({a, Tensor::zeros({2, 1, 3, 2})}), ConfigError);
}

TEST_CASE("elementwise and reductions") {
  const Tensor x({4}, {1.0, 2.0, 3.0, 6.0});
  CHECK(to_vec(add(x, Tensor::zeros({4}))) == to_vec(x));
  CHECK(abs(Tensor::scalar(-0.3)).item() == 0.3);
  CHECK(mean(x).item() == 3.0);
  CHECK_THROWS_AS(add(x, Tensor::zeros({3})), ConfigError);
  const Tensor onehot({2, 3}, {0, 1, 0, 0, 0, 1});
  CHECK(to_vec(l2_norm_per_sample(onehot)) == std::vector<double>{1.0, 1.0});
}

TEST_CASE("backward basics") {
  SUBCASE("identity loss") {
    const Tensor x = Tensor::scalar(2.5, true);
    CHECK(grad(x, {x})[0].item() == 1.0);
  }
  SUBCASE("mean of a linear map") {
    RngStream rng(6, "linear-map");
    const Tensor w = random_tensor({5}, rng);
    const Tensor x = random_tensor({5}, rng, -1, 1, 0, false);
    const auto g = grad(mean(mul(w, x)), {w})[0];
    for (std::size_t i = 0; i < 5; ++i) CHECK(g.at(i) == doctest::Approx(x.at(i) / 5.0).epsilon(1e-15));
  }
  SUBCASE("gradients sum over paths") {
    const Tensor x = Tensor::scalar(3.0, true);
    CHECK(grad(add(mul(x, x), x), {x})[0].item() == 7.0);
  }
  SUBCASE("unreached leaves get zero") {
    const Tensor x = Tensor::scalar(1.0, true);
    const Tensor unused = Tensor::zeros({2, 2}, true);
    const auto g = grad(scale(x, 2.0), {x, unused});
    CHECK(g[1].shape() == Shape{2, 2});
    CHECK(to_vec(g[1]) == std::vector<double>(4, 0.0));
    const auto all = backward(scale(x, 2.0));
    CHECK(all.at(x.id()).item() == 2.0);
  }
  SUBCASE("non-scalar loss is a usage error") {
    const Tensor x = Tensor::zeros({3}, true);
    CHECK_THROWS_AS(grad(scale(x, 2.0), {x}), UsageError);
    CHECK_THROWS_AS(backward(x), UsageError);
  }
}

TEST_CASE("graph trace is topologically ordered") {
  const Tensor x = Tensor::scalar(1.0, true);
  const Tensor y = mul(add(x, x), x);
  const auto trace = trace_graph(y);
  REQUIRE(!trace.empty());
  CHECK(trace.back().id == y.id());
  std::vector<NodeId> seen;
  for (const auto& e : trace) {
    for (NodeId in : e.inputs) CHECK(std::find(seen.begin(), seen.end(), in) != seen.end());
    CHECK(std::find(seen.begin(), seen.end(), e.id) == seen.end());
    seen.push_back(e.id);
  }
}

TEST_CASE("no graph is recorded without grad mode") {
  const Tensor x = Tensor::scalar(1.0, true);
  NoGradGuard guard;
  const Tensor y = scale(x, 2.0);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.is_leaf());
}

TEST_CASE("primitive gradients match central differences") {
  RngStream rng(7, "gradcheck");
  for (const auto& c : testing::primitive_cases()) {
    CAPTURE(c.name);
    for (int trial = 0; trial < 10; ++trial) {
      const auto inputs = c.inputs(rng);
      CHECK(testing::gradient_error(testing::probe(c, inputs, rng), inputs) <= 1e-5);
    }
  }
}

TEST_CASE("primitive gradients are themselves differentiable") {
  RngStream rng(8, "second-order");
  for (const auto& c : testing::primitive_cases()) {
    CAPTURE(c.name);
    for (int trial = 0; trial < 3; ++trial) {
      const auto inputs = c.inputs(rng);
      CHECK(testing::second_order_error(testing::probe(c, inputs, rng), inputs, rng) <= 1e-5);
    }
  }
}

TEST_CASE("gradient_as_graph") {
  RngStream rng(9, "gag");
  SUBCASE("half squared norm") {
    const Tensor x = random_tensor({2, 3}, rng);
    const Tensor g = gradient_as_graph(scale(sum(mul(x, x)), 0.5), x);
    CHECK(to_vec(g) == to_vec(x));
    const auto gg = grad(sum(g), {x})[0];
    for (double v : gg.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("unit-norm linear functional") {
    Tensor w = random_tensor({6}, rng, -1, 1, 0, false);
    const double n = l2_norm_per_sample(reshape(w, {1, 6})).item();
    w = scale(w, 1.0 / n);
    for (int t = 0; t < 5; ++t) {
      const Tensor x = random_tensor({6}, rng, -3, 3);
      const Tensor g = gradient_as_graph(sum(mul(w, x)), x);
      CHECK(l2_norm_per_sample(reshape(g, {1, 6})).item() == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  SUBCASE("Hessian-vector product of a quadratic form") {
    // f(x) = ½‖conv(x)‖² + c·x has Hessian CᵀC.
    const Tensor w = random_tensor({2, 1, 3, 3}, rng, -1, 1, 0, false);
    const Tensor c = random_tensor({1, 1, 5, 5}, rng, -1, 1, 0, false);
    const Tensor v = random_tensor({1, 1, 5, 5}, rng, -1, 1, 0, false);
    const auto f = [&](const Tensor& x) {
      const Tensor y = conv2d(x, w, Tensor(), 1, Padding::same);
      return add(scale(sum(mul(y, y)), 0.5), sum(mul(c, x)));
    };
    const Tensor x = random_tensor({1, 1, 5, 5}, rng);
    const Tensor g = gradient_as_graph(f(x), x);
    const auto hv = to_vec(grad(sum(mul(g, v)), {x})[0]);
    const double h = 1e-4;
    std::vector<double> xp = to_vec(x), xm = to_vec(x);
    for (std::size_t i = 0; i < xp.size(); ++i) {
      xp[i] += h * v.at(i);
      xm[i] -= h * v.at(i);
    }
    const Tensor tp({1, 1, 5, 5}, xp, true), tm({1, 1, 5, 5}, xm, true);
    const auto gp = to_vec(grad(f(tp), {tp})[0]);
    const auto gm = to_vec(grad(f(tm), {tm})[0]);
    std::vector<double> fd(gp.size());
    for (std::size_t i = 0; i < fd.size(); ++i) fd[i] = (gp[i] - gm[i]) / (2 * h);
    CHECK(testing::rel_err(hv, fd) <= 1e-6);
  }
  SUBCASE("op without a differentiable backward is named") {
    const Tensor x = random_tensor({3}, rng);
    const Tensor y = map_unary(x, [](double v) { return std::exp(v); },
                               [](double v) { return std::exp(v); }, "exp");
    CHECK(grad(sum(y), {x})[0].at(0) == doctest::Approx(std::exp(x.at(0))));
    try {
      gradient_as_graph(sum(y), x);
      FAIL("expected UnsupportedOpError");
    } catch (const UnsupportedOpError& e) {
      CHECK(e.op() == "exp");
    }
  }
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [] {
    RngStream rng(10, "det");
    const Tensor x = random_tensor({2, 3, 9, 9}, rng);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng);
    const Tensor loss = sum(mul(conv2d(x, w, Tensor(), 2, Padding::same),
                                conv2d(x, w, Tensor(), 2, Padding::same)));
    auto g = grad(loss, {x, w});
    std::vector<double> all{loss.item()};
    for (auto& t : g) all.insert(all.end(), t.values().begin(), t.values().end());
    return all;
  };
  CHECK(run() == run());
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS(Tensor({2, 2}, {1.0, 2.0, 3.0}));
  const Tensor x({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(scale(x, 2.0).mutable_values(), UsageError);
  CHECK(scale(x.detach(), 2.0).mutable_values().size() == 2);
  CHECK(all_finite(scale(x, 2.0).values()));
}
