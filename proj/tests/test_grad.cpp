#include <doctest.h>

#include <functional>

#include "dru/train.hpp"
#include "oracles.hpp"

// Central finite-difference checks for every differentiable primitive, on
// tensors no larger than (2,3,6,6). The binary built against the 64-bit
// engine runs the same cases at a 1e-5 tolerance; this one at 1e-2.

using namespace dru;

namespace {

constexpr double kTol = sizeof(real_t) == 4 ? 1e-2 : 1e-5;
constexpr double kStep = sizeof(real_t) == 4 ? 1e-2 : 1e-5;

using OpFn = std::function<Var(Tape&, const Var&)>;

std::shared_ptr<const Tensor4> projection_weights(const Shape4& s, std::uint64_t seed) {
  Tensor4 w = oracle::randn(s, seed);
  // keep weights away from zero so relative error stays well conditioned
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    w.data()[i] += w.data()[i] >= 0 ? real_t(0.5) : real_t(-0.5);
  }
  return std::make_shared<const Tensor4>(std::move(w));
}

// FD vs analytic for the input tensor and every listed parameter
void check_gradients(const OpFn& op, Tensor4 x, std::vector<Parameter*> params,
                     std::uint64_t wseed) {
  Tape probe(false);
  const Shape4 out_shape = op(probe, Tape::detached(x)).shape();
  auto w = projection_weights(out_shape, wseed);

  auto eval = [&]() {
    Tape t(false);
    Var y = op(t, Tape::detached(x));
    double acc = 0.0;  // double accumulation keeps FD noise down
    for (std::int64_t i = 0; i < y.val().numel(); ++i) {
      acc += double(y.val().data()[i]) * double(w->data()[i]);
    }
    return acc;
  };

  Tape t(true);
  Var xv = t.leaf(x);
  Var y = op(t, xv);
  Var loss = weighted_sum_all(t, y, w);
  for (Parameter* p : params) p->grad.zero();
  t.backward(loss);
  const Tensor4 gx = t.grad(xv.id);

  const Tensor4 fd_x = oracle::fd_gradient(x, eval, kStep);
  CAPTURE(kTol);
  CHECK(oracle::grad_rel_error(gx, fd_x) < kTol);

  for (Parameter* p : params) {
    CAPTURE(p->name);
    const Tensor4 fd_p = oracle::fd_gradient(p->value, eval, kStep);
    CHECK(oracle::grad_rel_error(p->grad, fd_p) < kTol);
  }
}

struct OwnedConv {
  Parameter weight, bias;
  ConvParams params;

  OwnedConv(Shape4 wshape, int stride, PaddingMode pad, std::uint64_t seed) {
    weight = Parameter{"w", oracle::randn(wshape, seed, 0.5), Tensor4(wshape), true};
    bias = Parameter{"b", oracle::randn({1, wshape.n, 1, 1}, seed + 1, 0.1),
                     Tensor4({1, wshape.n, 1, 1}), true};
    params = ConvParams{&weight, &bias, stride, pad};
  }
};

struct OwnedBn {
  Parameter gamma, beta, rm, rv;
  BatchNormParams params;

  explicit OwnedBn(std::int64_t c, std::uint64_t seed) {
    const Shape4 s{1, c, 1, 1};
    gamma = Parameter{"gamma", oracle::randn(s, seed, 0.2), Tensor4(s), true};
    for (std::int64_t i = 0; i < c; ++i) gamma.value.data()[i] += real_t(1);
    beta = Parameter{"beta", oracle::randn(s, seed + 1, 0.2), Tensor4(s), true};
    rm = Parameter{"rm", Tensor4(s), Tensor4(s), false};
    rv = Parameter{"rv", Tensor4(s, real_t(1)), Tensor4(s), false};
    params = BatchNormParams{&gamma, &beta, &rm, &rv};
  }
};

}  // namespace

TEST_CASE("gradcheck: conv2d variants") {
  {
    OwnedConv c({4, 3, 3, 3}, 1, PaddingMode::same_ceil, 1001);
    check_gradients([&](Tape& t, const Var& x) { return conv2d(t, x, c.params); },
                    oracle::randn({2, 3, 6, 6}, 1), {&c.weight, &c.bias}, 51);
  }
  {
    OwnedConv c({2, 3, 3, 3}, 2, PaddingMode::same_ceil, 1002);
    check_gradients([&](Tape& t, const Var& x) { return conv2d(t, x, c.params); },
                    oracle::randn({2, 3, 5, 6}, 2), {&c.weight, &c.bias}, 52);
  }
  {
    OwnedConv c({3, 2, 2, 2}, 1, PaddingMode::valid, 1003);
    check_gradients([&](Tape& t, const Var& x) { return conv2d(t, x, c.params); },
                    oracle::randn({1, 2, 5, 5}, 3), {&c.weight, &c.bias}, 53);
  }
  {
    // pointwise fast path
    OwnedConv c({4, 3, 1, 1}, 1, PaddingMode::same_ceil, 1004);
    check_gradients([&](Tape& t, const Var& x) { return conv2d(t, x, c.params); },
                    oracle::randn({2, 3, 4, 4}, 4), {&c.weight, &c.bias}, 54);
  }
  {
    // strided 1x1 (the bottleneck downsampling conv)
    OwnedConv c({4, 3, 1, 1}, 2, PaddingMode::same_ceil, 1005);
    check_gradients([&](Tape& t, const Var& x) { return conv2d(t, x, c.params); },
                    oracle::randn({2, 3, 5, 5}, 5), {&c.weight, &c.bias}, 55);
  }
}

TEST_CASE("gradcheck: conv2d_transpose") {
  for (std::int64_t crop : {0, 1}) {
    CAPTURE(crop);
    Parameter w{"w", oracle::randn({3, 2, 2, 2}, 1010 + crop, 0.5), Tensor4({3, 2, 2, 2}), true};
    Parameter b{"b", oracle::randn({1, 2, 1, 1}, 1012, 0.1), Tensor4({1, 2, 1, 1}), true};
    ConvParams p{&w, &b, 2, PaddingMode::same_ceil};
    check_gradients(
        [&, crop](Tape& t, const Var& x) {
          return conv2d_transpose(t, x, p, 6 - crop, 8 - crop);
        },
        oracle::randn({2, 3, 3, 4}, 6), {&w, &b}, 56);
  }
}

TEST_CASE("gradcheck: batch_norm train mode") {
  OwnedBn bn(3, 1020);
  check_gradients([&](Tape& t, const Var& x) { return batch_norm(t, x, bn.params, Mode::train); },
                  oracle::randn({2, 3, 4, 4}, 7), {&bn.gamma, &bn.beta}, 57);
}

TEST_CASE("gradcheck: relu away from the kink") {
  Tensor4 x = oracle::randn({2, 3, 6, 6}, 8);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    x.data()[i] += x.data()[i] >= 0 ? real_t(0.2) : real_t(-0.2);
  }
  check_gradients([](Tape& t, const Var& v) { return relu(t, v); }, std::move(x), {}, 58);

  // spot values from the spec: d/dx relu at -1 is 0, at 2 is 1
  Tape t(true);
  Tensor4 pts({1, 1, 1, 2});
  pts.data()[0] = real_t(-1);
  pts.data()[1] = real_t(2);
  Var xv = t.leaf(pts);
  Var loss = sum_all(t, relu(t, xv));
  t.backward(loss);
  CHECK(t.grad(xv.id).data()[0] == real_t(0));
  CHECK(t.grad(xv.id).data()[1] == real_t(1));
}

TEST_CASE("gradcheck: dropout with a fixed mask") {
  check_gradients(
      [](Tape& t, const Var& v) { return dropout(t, v, real_t(0.3), Mode::train, 4242); },
      oracle::randn({2, 3, 6, 6}, 9), {}, 59);
}

TEST_CASE("gradcheck: concat_channels (each side)") {
  const Tensor4 a0 = oracle::randn({1, 2, 4, 4}, 10);
  const Tensor4 b0 = oracle::randn({1, 3, 4, 4}, 11);
  check_gradients(
      [&](Tape& t, const Var& x) { return concat_channels(t, x, Tape::detached(b0)); },
      a0, {}, 60);
  check_gradients(
      [&](Tape& t, const Var& x) { return concat_channels(t, Tape::detached(a0), x); },
      b0, {}, 61);
}

TEST_CASE("gradcheck: add with a shared operand") {
  check_gradients([](Tape& t, const Var& x) { return add(t, x, x); },
                  oracle::randn({2, 2, 3, 3}, 12), {}, 62);
}

TEST_CASE("gradcheck: softmax_channels") {
  check_gradients([](Tape& t, const Var& x) { return softmax_channels(t, x); },
                  oracle::randn({2, 4, 3, 3}, 13), {}, 63);
}

TEST_CASE("gradcheck: softmax + sparse CE") {
  LabelMap labels(1, 3, 3);
  Rng lr(14);
  for (auto& v : labels.v) v = static_cast<std::int32_t>(lr.below(4));
  check_gradients(
      [&](Tape& t, const Var& x) { return sparse_ce_loss(t, x, labels); },
      oracle::randn({1, 4, 3, 3}, 15), {}, 64);
}

TEST_CASE("gradcheck: pre-activation residual chain") {
  // bn -> relu -> conv3x3 and a 1x1 projection of the same pre-activation,
  // added; exercises gradient accumulation through shared inputs
  OwnedBn bn(2, 1030);
  OwnedConv main({4, 2, 3, 3}, 1, PaddingMode::same_ceil, 1031);
  OwnedConv proj({4, 2, 1, 1}, 1, PaddingMode::same_ceil, 1032);
  check_gradients(
      [&](Tape& t, const Var& x) {
        Var pre = relu(t, batch_norm(t, x, bn.params, Mode::train));
        return add(t, conv2d(t, pre, main.params), conv2d(t, pre, proj.params));
      },
      oracle::randn({2, 2, 5, 5}, 16),
      {&bn.gamma, &bn.beta, &main.weight, &main.bias, &proj.weight, &proj.bias}, 65);
}

TEST_CASE("gradcheck: loss = sum(conv2d(x, k)) w.r.t. the kernel") {
  OwnedConv c({2, 2, 3, 3}, 1, PaddingMode::same_ceil, 1040);
  Tensor4 x = oracle::randn({1, 2, 5, 5}, 17);

  auto eval = [&]() {
    Tape t(false);
    Var y = conv2d(t, Tape::detached(x), c.params);
    double acc = 0.0;
    for (std::int64_t i = 0; i < y.val().numel(); ++i) acc += double(y.val().data()[i]);
    return acc;
  };

  Tape t(true);
  Var loss = sum_all(t, conv2d(t, t.leaf(x), c.params));
  c.weight.grad.zero();
  t.backward(loss);
  const Tensor4 fd = oracle::fd_gradient(c.weight.value, eval, kStep);
  CHECK(oracle::grad_rel_error(c.weight.grad, fd) < kTol);
}
