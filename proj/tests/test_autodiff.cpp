#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "vdiff/rng.hpp"
#include "vdiff/tensor.hpp"

using namespace vdiff;

namespace {

using OpFn = std::function<Tensor(std::vector<Tensor>&)>;

double projected_loss(const OpFn& f, std::vector<Tensor>& inputs,
                      const std::vector<double>& w) {
  Tensor out = f(inputs);
  double s = 0.0;
  for (long i = 0; i < out.numel(); ++i) s += w[static_cast<size_t>(i)] * out.value_at(i);
  return s;
}

// Central-difference check of d(w . f(inputs))/d(inputs) against the tape,
// over every element of every input. Returns the worst relative error.
double fd_max_rel_err(const OpFn& f, std::vector<Tensor> inputs, std::uint64_t seed = 7) {
  Tensor probe = f(inputs);
  Rng rng(seed, 17);
  std::vector<double> w(static_cast<size_t>(probe.numel()));
  for (auto& v : w) v = rng.normal();

  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    Tensor out = f(inputs);
    Tensor wt = Tensor::from_values(out.shape(), w, out.dtype());
    Tensor loss = ops::sum(ops::mul(out, wt));
    tape.backward(loss);
  }

  const double h = 1e-5;
  double worst = 0.0;
  for (auto& t : inputs) {
    for (long i = 0; i < t.numel(); ++i) {
      double orig = t.value_at(i);
      t.set_value(i, orig + h);
      double lp = projected_loss(f, inputs, w);
      t.set_value(i, orig - h);
      double lm = projected_loss(f, inputs, w);
      t.set_value(i, orig);
      double fd = (lp - lm) / (2.0 * h);
      double ad = t.grad_at(i);
      double err = std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

Tensor rnd(Shape s, Rng& rng) { return Tensor::randn(std::move(s), rng); }

}  // namespace

TEST_CASE("elementwise gradients") {
  Rng rng(101);
  auto a = rnd({3, 4}, rng);
  auto b = rnd({3, 4}, rng);
  CHECK(fd_max_rel_err([](auto& in) { return ops::add(in[0], in[1]); }, {a, b}) < 1e-6);
  CHECK(fd_max_rel_err([](auto& in) { return ops::sub(in[0], in[1]); }, {a, b}) < 1e-6);
  CHECK(fd_max_rel_err([](auto& in) { return ops::mul(in[0], in[1]); }, {a, b}) < 1e-6);
  CHECK(fd_max_rel_err([](auto& in) { return ops::scalar_mul(in[0], -1.7); }, {a}) < 1e-6);
  CHECK(fd_max_rel_err([](auto& in) { return ops::scalar_add(in[0], 2.5); }, {a}) < 1e-6);
  CHECK(fd_max_rel_err([](auto& in) { return ops::silu(in[0]); }, {a}) < 1e-6);
  CHECK(fd_max_rel_err([](auto& in) { return ops::tanh_op(in[0]); }, {a}) < 1e-6);
}

TEST_CASE("shape op gradients") {
  Rng rng(102);
  auto x = rnd({2, 3, 4}, rng);
  CHECK(fd_max_rel_err([](auto& in) { return ops::reshape(in[0], {4, 6}); }, {x}) < 1e-6);
  CHECK(fd_max_rel_err([](auto& in) { return ops::permute(in[0], {2, 0, 1}); }, {x}) < 1e-6);
  auto a = rnd({2, 2, 3}, rng);
  auto b = rnd({2, 4, 3}, rng);
  CHECK(fd_max_rel_err([](auto& in) { return ops::concat_channels(in[0], in[1]); }, {a, b}) <
        1e-6);
  CHECK(fd_max_rel_err([](auto& in) { return ops::slice_channels(in[0], 1, 2); }, {b}) < 1e-6);
}

TEST_CASE("reduction gradients") {
  Rng rng(103);
  auto x = rnd({3, 5}, rng);
  CHECK(fd_max_rel_err([](auto& in) { return ops::sum(in[0]); }, {x}) < 1e-6);
  CHECK(fd_max_rel_err([](auto& in) { return ops::mean(in[0]); }, {x}) < 1e-6);
}

TEST_CASE("linear and matmul gradients") {
  Rng rng(104);
  auto x = rnd({3, 4}, rng);
  auto w = rnd({5, 4}, rng);
  auto b = rnd({5}, rng);
  CHECK(fd_max_rel_err([](auto& in) { return ops::linear(in[0], in[1], in[2]); }, {x, w, b}) <
        1e-5);
  auto m = rnd({3, 4}, rng);
  auto n = rnd({4, 2}, rng);
  CHECK(fd_max_rel_err([](auto& in) { return ops::matmul(in[0], in[1]); }, {m, n}) < 1e-5);
}

TEST_CASE("conv2d gradients") {
  Rng rng(105);
  auto in = rnd({2, 3, 5, 4}, rng);
  auto k = rnd({4, 3, 3, 3}, rng);
  auto b = rnd({4}, rng);
  CHECK(fd_max_rel_err([](auto& t) { return ops::conv2d(t[0], t[1], t[2], 1, 1); },
                       {in, k, b}) < 1e-5);
  auto in2 = rnd({1, 2, 8, 8}, rng);
  auto k2 = rnd({3, 2, 3, 3}, rng);
  auto b2 = rnd({3}, rng);
  CHECK(fd_max_rel_err([](auto& t) { return ops::conv2d(t[0], t[1], t[2], 2, 1); },
                       {in2, k2, b2}) < 1e-5);
  auto k1 = rnd({3, 2, 1, 1}, rng);
  CHECK(fd_max_rel_err([](auto& t) { return ops::conv2d(t[0], t[1], t[2], 1, 0); },
                       {in2, k1, b2}) < 1e-5);
}

TEST_CASE("conv1d_temporal gradients") {
  Rng rng(106);
  auto in = rnd({2, 3, 5, 2, 2}, rng);
  auto k = rnd({4, 3, 3}, rng);
  auto b = rnd({4}, rng);
  CHECK(fd_max_rel_err([](auto& t) { return ops::conv1d_temporal(t[0], t[1], t[2]); },
                       {in, k, b}) < 1e-5);
}

TEST_CASE("group_norm gradients") {
  Rng rng(107);
  auto x = rnd({2, 4, 3, 3}, rng);
  CHECK(fd_max_rel_err([](auto& t) { return ops::group_norm(t[0], 2); }, {x}) < 1e-5);
  CHECK(fd_max_rel_err([](auto& t) { return ops::group_norm(t[0], 4); }, {x}) < 1e-5);
  auto s = rnd({4}, rng);
  auto b = rnd({4}, rng);
  CHECK(fd_max_rel_err(
            [](auto& t) {
              return ops::add_bias_channels(ops::scale_channels(ops::group_norm(t[0], 2), t[1]),
                                            t[2]);
            },
            {x, s, b}) < 1e-5);
}

TEST_CASE("softmax and attention gradients") {
  Rng rng(108);
  auto x = rnd({4, 6}, rng);
  CHECK(fd_max_rel_err([](auto& t) { return ops::softmax(t[0]); }, {x}) < 1e-5);
  auto q = rnd({2, 2, 3, 4}, rng);
  auto k = rnd({2, 2, 3, 4}, rng);
  auto v = rnd({2, 2, 3, 4}, rng);
  CHECK(fd_max_rel_err([](auto& t) { return ops::attention(t[0], t[1], t[2]); }, {q, k, v}) <
        1e-5);
}

TEST_CASE("embedding and resampling gradients") {
  Rng rng(109);
  auto table = rnd({5, 3}, rng);
  // repeated ids must accumulate
  CHECK(fd_max_rel_err([](auto& t) { return ops::embedding_lookup(t[0], {2, 0, 2, 4}); },
                       {table}) < 1e-6);
  auto x = rnd({2, 3, 4, 4}, rng);
  CHECK(fd_max_rel_err([](auto& t) { return ops::nearest_downsample(t[0], 2); }, {x}) < 1e-6);
  CHECK(fd_max_rel_err([](auto& t) { return ops::nearest_upsample(t[0], 2); }, {x}) < 1e-6);
}

TEST_CASE("broadcast helper gradients") {
  Rng rng(117);
  auto emb = rnd({2, 5}, rng);
  CHECK(fd_max_rel_err([](auto& t) { return ops::repeat_rows(t[0], 3); }, {emb}) < 1e-6);
  auto x = rnd({3, 2, 4, 4}, rng);
  auto b = rnd({3, 2}, rng);
  CHECK(fd_max_rel_err([](auto& t) { return ops::add_bias_spatial(t[0], t[1]); }, {x, b}) <
        1e-6);
}

TEST_CASE("composite graph gradient") {
  Rng rng(110);
  auto in = rnd({1, 2, 4, 4}, rng);
  auto k = rnd({4, 2, 3, 3}, rng);
  auto b = rnd({4}, rng);
  auto fn = [](std::vector<Tensor>& t) {
    Tensor h = ops::conv2d(t[0], t[1], t[2], 1, 1);
    h = ops::group_norm(h, 2);
    h = ops::silu(h);
    Tensor flat = ops::reshape(h, {1, 1, 4, 16});  // heads over channels
    Tensor att = ops::attention(flat, flat, flat);
    return ops::mean(ops::mul(att, att));
  };
  CHECK(fd_max_rel_err(fn, {in, k, b}) < 1e-5);
}

TEST_CASE("reused tensor accumulates gradient from both uses") {
  Rng rng(111);
  auto x = rnd({3}, rng);
  // f(x) = sum(x*x) + sum(x): grad = 2x + 1
  x.set_requires_grad(true);
  x.zero_grad();
  {
    Tape tape;
    Tensor loss = ops::add(ops::sum(ops::mul(x, x)), ops::sum(x));
    tape.backward(loss);
  }
  for (long i = 0; i < 3; ++i)
    CHECK(x.grad_at(i) == doctest::Approx(2 * x.value_at(i) + 1).epsilon(1e-12));
}

TEST_CASE("tape scoping and zero_grad") {
  Rng rng(112);
  auto x = rnd({2}, rng);
  x.set_requires_grad(true);

  // no active tape: nothing recorded, output does not require grad
  Tensor y = ops::scalar_mul(x, 3.0);
  CHECK_FALSE(y.requires_grad());

  x.zero_grad();
  {
    Tape tape;
    Tensor loss = ops::sum(ops::scalar_mul(x, 3.0));
    CHECK(tape.size() == 2);
    tape.backward(loss);
  }
  CHECK(x.grad_at(0) == doctest::Approx(3.0));

  // grads accumulate across tapes until cleared
  {
    Tape tape;
    tape.backward(ops::sum(ops::scalar_mul(x, 3.0)));
  }
  CHECK(x.grad_at(0) == doctest::Approx(6.0));
  x.zero_grad();
  CHECK(x.grad_at(0) == 0.0);

  CHECK_THROWS_AS(backward(ops::sum(x)), std::logic_error);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::zeros({3});
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = ops::scalar_mul(x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}
