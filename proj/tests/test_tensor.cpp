#include <cmath>

#include "doctest.h"
#include "resunetpp/ops.hpp"
#include "test_util.hpp"

using namespace resunetpp;
using resunetpp::testing::naive_conv;
using resunetpp::testing::random_tensor;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Fixed random weights for turning a tensor into a scalar without the
// symmetries of a plain sum.
Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  return sum(mul(y, random_tensor(y.shape(), seed)));
}

}  // namespace

TEST_SUITE("conv2d") {
  TEST_CASE("unit kernel scales a constant field") {
    auto x = Tensor<double>::ones({1, 1, 3, 3});
    Tensor<double> w({1, 1, 1, 1}, 2.0);
    auto y = conv2d<double>(x, w, std::nullopt);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    for (double v : y.data()) CHECK(v == 2.0);
  }

  TEST_CASE("stride 2 subsamples a constant field") {
    auto x = Tensor<double>::ones({1, 1, 4, 4});
    auto w = Tensor<double>::ones({1, 1, 1, 1});
    auto y = conv2d<double>(x, w, std::nullopt, {.stride = 2});
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (double v : y.data()) CHECK(v == 1.0);
  }

  TEST_CASE("dilated 3x3 on 5x5 matches the direct oracle") {
    auto x = random_tensor({1, 1, 5, 5}, 11);
    auto w = random_tensor({1, 1, 3, 3}, 12);
    auto y = conv2d<double>(x, w, std::nullopt, {.dilation = 2});
    Index oh = 0, ow = 0;
    auto ref = naive_conv(x.to_vector(), x.shape(), w.to_vector(), w.shape(), 1, 2, true, oh, ow);
    CHECK(y.shape() == Shape{1, 1, oh, ow});
    CHECK(max_abs_diff(y.data(), ref) < 1e-12);
  }

  TEST_CASE("lowered and direct paths match the oracle across the stride/dilation/padding grid") {
    std::uint64_t seed = 100;
    for (int stride : {1, 2})
      for (int dilation : {1, 2})
        for (bool same : {true, false})
          for (Index hw : {5, 6, 7, 8, 9}) {
            auto x = random_tensor({2, 3, hw, hw + 1}, ++seed);
            auto w = random_tensor({4, 3, 3, 3}, ++seed);
            Conv2dOptions opts{.stride = stride, .dilation = dilation, .padding = same ? Padding::Same : Padding::Valid};
            Index oh = 0, ow = 0;
            auto ref = naive_conv(x.to_vector(), x.shape(), w.to_vector(), w.shape(), stride, dilation, same, oh, ow);
            auto fast = conv2d<double>(x, w, std::nullopt, opts);
            opts.algorithm = ConvAlgorithm::Direct;
            auto direct = conv2d<double>(x, w, std::nullopt, opts);
            CAPTURE(stride);
            CAPTURE(dilation);
            CAPTURE(same);
            CAPTURE(hw);
            REQUIRE(fast.shape() == Shape{2, 4, oh, ow});
            CHECK(max_abs_diff(fast.data(), ref) < 1e-10);
            CHECK(max_abs_diff(direct.data(), ref) < 1e-10);
          }
  }

  TEST_CASE("same padding keeps ceil(H/stride) and puts the extra pixel bottom/right") {
    auto g = conv_geometry(6, 3, 2, 1, Padding::Same);
    CHECK(g.out == 3);
    // total pad = (3-1)*2 + 3 - 6 = 1 -> 0 before, 1 after
    CHECK(g.pad_begin == 0);
    g = conv_geometry(7, 3, 1, 2, Padding::Same);
    CHECK(g.out == 7);
    CHECK(g.pad_begin == 2);
  }

  TEST_CASE("linearity in the input") {
    auto x = random_tensor({1, 2, 7, 7}, 1);
    auto z = random_tensor({1, 2, 7, 7}, 2);
    auto w = random_tensor({3, 2, 3, 3}, 3);
    const double a = 0.7, b = -1.3;
    auto lhs = conv2d<double>(add(scale(x, a), scale(z, b)), w, std::nullopt, {.dilation = 2});
    auto rhs = add(scale(conv2d<double>(x, w, std::nullopt, {.dilation = 2}), a),
                   scale(conv2d<double>(z, w, std::nullopt, {.dilation = 2}), b));
    CHECK(max_abs_diff(lhs.data(), rhs.data()) < 1e-10);
  }

  TEST_CASE("bias is added per output channel") {
    auto x = Tensor<double>::zeros({1, 1, 2, 2});
    auto w = Tensor<double>::ones({2, 1, 3, 3});
    Tensor<double> b({2}, std::vector<double>{0.5, -2.0});
    auto y = conv2d<double>(x, w, b);
    CHECK(y.at(0, 0, 1, 1) == 0.5);
    CHECK(y.at(0, 1, 0, 0) == -2.0);
  }

  TEST_CASE("errors") {
    auto x = Tensor<double>::ones({1, 2, 4, 4});
    CHECK_THROWS_AS(conv2d<double>(x, Tensor<double>::ones({1, 3, 3, 3}), std::nullopt), ShapeError);
    CHECK_THROWS_AS(conv2d<double>(x, Tensor<double>::ones({1, 2, 5, 5}), std::nullopt, {.padding = Padding::Valid}),
                    ShapeError);
    CHECK_THROWS_AS(conv2d<double>(x, Tensor<double>::ones({1, 2, 3, 3}), std::nullopt, {.stride = 0}), ShapeError);
  }
}

TEST_SUITE("batch_norm") {
  TEST_CASE("constant input normalizes to zero") {
    Tensor<double> x({2, 3, 4, 4}, 5.0);
    auto gamma = Tensor<double>::ones({3});
    auto beta = Tensor<double>::zeros({3});
    BatchNormStats<double> stats(3);
    auto y = batch_norm(x, gamma, beta, stats, Mode::Train);
    for (double v : y.data()) CHECK(v == 0.0);
  }

  TEST_CASE("gamma = 0 yields beta everywhere") {
    auto x = random_tensor({2, 2, 3, 3}, 4);
    auto gamma = Tensor<double>::zeros({2});
    Tensor<double> beta({2}, 0.25);
    BatchNormStats<double> stats(2);
    auto y = batch_norm(x, gamma, beta, stats, Mode::Train);
    for (double v : y.data()) CHECK(v == 0.25);
  }

  TEST_CASE("train-mode output has per-channel zero mean and unit variance") {
    auto x = random_tensor({2, 3, 4, 4}, 5, -3.0, 4.0);
    BatchNormStats<double> stats(3);
    // epsilon is tiny so that the recomputed variance is 1 to within 1e-6
    auto y = batch_norm(x, Tensor<double>::ones({3}), Tensor<double>::zeros({3}), stats, Mode::Train,
                        {.momentum = 0.99, .epsilon = 1e-12});
    for (Index c = 0; c < 3; ++c) {
      double s = 0, ss = 0;
      int n = 0;
      for (Index b = 0; b < 2; ++b)
        for (Index i = 0; i < 4; ++i)
          for (Index j = 0; j < 4; ++j) {
            s += y.at(b, c, i, j);
            ++n;
          }
      const double m = s / n;
      for (Index b = 0; b < 2; ++b)
        for (Index i = 0; i < 4; ++i)
          for (Index j = 0; j < 4; ++j) ss += (y.at(b, c, i, j) - m) * (y.at(b, c, i, j) - m);
      CHECK(std::abs(m) < 1e-6);
      CHECK(std::abs(ss / n - 1.0) < 1e-6);
    }
  }

  TEST_CASE("running statistics: first batch copies, later batches blend with momentum") {
    BatchNormStats<double> stats(1);
    auto gamma = Tensor<double>::ones({1});
    auto beta = Tensor<double>::zeros({1});
    batch_norm(Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}), gamma, beta, stats, Mode::Train);
    CHECK(stats.mean[0] == doctest::Approx(2.5));
    CHECK(stats.var[0] == doctest::Approx(1.25));
    batch_norm(Tensor<double>({1, 1, 2, 2}, 10.0), gamma, beta, stats, Mode::Train, {.momentum = 0.9});
    CHECK(stats.mean[0] == doctest::Approx(0.9 * 2.5 + 0.1 * 10.0));
    CHECK(stats.var[0] == doctest::Approx(0.9 * 1.25));
  }

  TEST_CASE("eval mode uses running statistics and refuses uninitialized ones") {
    BatchNormStats<double> stats(1);
    auto gamma = Tensor<double>::ones({1});
    auto beta = Tensor<double>::zeros({1});
    Tensor<double> x({1, 1, 1, 2}, std::vector<double>{0.0, 2.0});
    CHECK_THROWS_AS(batch_norm(x, gamma, beta, stats, Mode::Eval), StateError);
    stats.mean = {1.0};
    stats.var = {4.0};
    stats.batches_tracked = 1;
    auto y = batch_norm(x, gamma, beta, stats, Mode::Eval, {.momentum = 0.99, .epsilon = 1e-12});
    CHECK(y.data()[0] == doctest::Approx(-0.5));
    CHECK(y.data()[1] == doctest::Approx(0.5));
  }

  TEST_CASE("channel mismatch") {
    BatchNormStats<double> stats(2);
    CHECK_THROWS_AS(batch_norm(Tensor<double>::ones({1, 3, 2, 2}), Tensor<double>::ones({2}),
                               Tensor<double>::zeros({2}), stats, Mode::Train),
                    ShapeError);
  }
}

TEST_SUITE("elementwise and pooling") {
  TEST_CASE("relu and sigmoid values") {
    Tensor<double> x({3}, std::vector<double>{-1, 0, 2});
    CHECK(relu(x).to_vector() == std::vector<double>{0, 0, 2});
    CHECK(sigmoid(Tensor<double>::scalar(0.0)).item() == 0.5);
    auto s = sigmoid(Tensor<double>({4}, std::vector<double>{-30, -1, 1, 30}));
    for (double v : s.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }

  TEST_CASE("sigmoid derivative at 0 is 0.25") {
    Tensor<double> x({1}, 0.0, true);
    Tape<double> tape;
    Tensor<double> y;
    {
      TapeScope<double> scope(tape);
      y = sigmoid(x);
    }
    backward(y, tape);
    CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
  }

  TEST_CASE("relu subgradient at 0 is 0") {
    Tensor<double> x({1}, 0.0, true);
    Tape<double> tape;
    Tensor<double> y;
    {
      TapeScope<double> scope(tape);
      y = sum(relu(x));
    }
    backward(y, tape);
    CHECK(x.grad()[0] == 0.0);
  }

  TEST_CASE("global average pool") {
    auto y = global_avg_pool(Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 2.5);
    CHECK(global_avg_pool(Tensor<double>({1, 1, 3, 5}, 1.75)).item() == 1.75);
    auto x = random_tensor({2, 3, 6, 5}, 21);
    auto p = global_avg_pool(x);
    for (Index n = 0; n < 2; ++n)
      for (Index c = 0; c < 3; ++c) {
        double s = 0;
        for (Index i = 0; i < 6; ++i)
          for (Index j = 0; j < 5; ++j) s += x.at(n, c, i, j);
        CHECK(std::abs(p.at(n, c, 0, 0) - s / 30.0) < 1e-12);
      }
  }

  TEST_CASE("nearest upsample replicates blocks and sums gradients per block") {
    Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}, true);
    Tape<double> tape;
    Tensor<double> y, loss;
    {
      TapeScope<double> scope(tape);
      y = nearest_upsample(x, 2);
      loss = sum(y);
    }
    CHECK(y.to_vector() == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
    backward(loss, tape);
    for (double g : x.grad()) CHECK(g == 4.0);
    auto same = nearest_upsample(x, 1);
    CHECK(same.to_vector() == x.to_vector());
  }

  TEST_CASE("upsample then average pool by the same factor is the identity") {
    for (int f : {1, 2, 3}) {
      auto x = random_tensor({2, 3, 4, 5}, 30 + f);
      auto back = avg_pool(nearest_upsample(x, f), f);
      CHECK(max_abs_diff(back.data(), x.data()) < 1e-15);
    }
  }

  TEST_CASE("add / mul identities and broadcasting") {
    auto x = random_tensor({2, 3, 4, 4}, 40);
    CHECK(add(x, Tensor<double>::zeros(x.shape())).to_vector() == x.to_vector());
    CHECK(mul(x, Tensor<double>::ones(x.shape())).to_vector() == x.to_vector());
    Tensor<double> gate({2, 3, 1, 1}, std::vector<double>{1, 2, 3, 4, 5, 6});
    auto y = mul(x, gate);
    CHECK(y.shape() == x.shape());
    CHECK(y.at(1, 2, 3, 1) == x.at(1, 2, 3, 1) * 6);
    Tensor<double> map({2, 1, 4, 4}, 0.5);
    CHECK(mul(x, map).at(0, 2, 1, 1) == x.at(0, 2, 1, 1) * 0.5);
    CHECK_THROWS_AS(add(x, Tensor<double>::ones({2, 2, 4, 4})), ShapeError);
    CHECK_THROWS_AS(mul(x, Tensor<double>::ones({3, 4, 4})), ShapeError);
  }

  TEST_CASE("concat along channels") {
    auto a = Tensor<double>::ones({1, 2, 2, 2});
    auto b = Tensor<double>::zeros({1, 3, 2, 2});
    auto c = concat(a, b);
    CHECK(c.shape() == Shape{1, 5, 2, 2});
    CHECK(c.at(0, 1, 1, 1) == 1.0);
    CHECK(c.at(0, 2, 0, 0) == 0.0);
    CHECK_THROWS_AS(concat(a, Tensor<double>::ones({1, 1, 3, 2})), ShapeError);
  }
}

TEST_SUITE("losses") {
  TEST_CASE("perfect prediction") {
    Tensor<double> t({1, 1, 2, 2}, std::vector<double>{0, 1, 1, 0});
    const double bce = bce_loss(t, t).item();
    CHECK(bce > 0.0);
    CHECK(bce < 2e-7);
    CHECK(std::abs(dice_loss(t, t).item()) < 1e-12);
  }

  TEST_CASE("half probability gives ln 2") {
    Tensor<double> p({1, 1, 2, 2}, 0.5);
    Tensor<double> t({1, 1, 2, 2}, std::vector<double>{0, 1, 1, 0});
    CHECK(bce_loss(p, t).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  }

  TEST_CASE("random 8-element case matches termwise formulas") {
    auto p = random_tensor({8}, 50, 0.05, 0.95);
    Tensor<double> t({8}, std::vector<double>{1, 0, 0, 1, 1, 1, 0, 0});
    double bce = 0, inter = 0, sp = 0, st = 0;
    for (int i = 0; i < 8; ++i) {
      const double pi = p.data()[i], ti = t.data()[i];
      bce += -(ti * std::log(pi) + (1 - ti) * std::log(1 - pi));
      inter += pi * ti;
      sp += pi;
      st += ti;
    }
    const double smooth = 1e-3;
    CHECK(bce_loss(p, t).item() == doctest::Approx(bce / 8).epsilon(1e-14));
    CHECK(dice_loss(p, t, smooth).item() ==
          doctest::Approx(1 - (2 * inter + smooth) / (sp + st + smooth)).epsilon(1e-14));
  }

  TEST_CASE("shape mismatch") {
    CHECK_THROWS_AS(bce_loss(Tensor<double>({4}, 0.5), Tensor<double>({5}, 0.0)), ShapeError);
    CHECK_THROWS_AS(dice_loss(Tensor<double>({4}, 0.5), Tensor<double>({2, 2}, 0.0)), ShapeError);
  }
}

TEST_SUITE("autograd") {
  TEST_CASE("y = 2x") {
    Tensor<double> x({1}, 3.0, true);
    Tape<double> tape;
    Tensor<double> y;
    {
      TapeScope<double> scope(tape);
      y = scale(x, 2.0);
    }
    backward(y, tape);
    CHECK(y.item() == 6.0);
    CHECK(x.grad()[0] == 2.0);
  }

  TEST_CASE("fan-out accumulates: y = x + x") {
    auto x = random_tensor({2, 3}, 60, -1, 1, true);
    Tape<double> tape;
    Tensor<double> y;
    {
      TapeScope<double> scope(tape);
      y = sum(add(x, x));
    }
    backward(y, tape);
    for (double g : x.grad()) CHECK(g == 2.0);
  }

  TEST_CASE("second backward without a new forward is an error") {
    Tensor<double> x({1}, 1.0, true);
    Tape<double> tape;
    Tensor<double> y;
    {
      TapeScope<double> scope(tape);
      y = sum(x);
    }
    backward(y, tape);
    CHECK_THROWS_AS(backward(y, tape), StateError);
    tape.reset();
    {
      TapeScope<double> scope(tape);
      y = sum(x);
    }
    CHECK_NOTHROW(backward(y, tape));
    CHECK(x.grad()[0] == 2.0);
  }

  TEST_CASE("backward on a detached tensor is an error") {
    Tensor<double> x({1}, 1.0, true);
    Tape<double> tape;
    Tensor<double> y = sum(x);  // no active tape
    CHECK_THROWS_AS(backward(y, tape), StateError);
    Tensor<double> z;
    {
      TapeScope<double> scope(tape);
      z = sum(add(x, x));
    }
    CHECK_THROWS_AS(backward(Tensor<double>::scalar(1.0), tape), StateError);
    CHECK_THROWS_AS(backward(concat(Tensor<double>::ones({1, 1, 1, 1}), Tensor<double>::ones({1, 1, 1, 1})), tape), ShapeError);
  }

  TEST_CASE("no recording without an active tape") {
    Tensor<double> x({2}, 1.0, true);
    auto y = relu(x);
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_SUITE("grad_check") {
  TEST_CASE("sum of squares") {
    auto x = random_tensor({3, 4}, 70);
    const double err = grad_check([](const Tensor<double>& v) { return sum(mul(v, v)); }, x);
    CHECK(err < 1e-7);
  }

  TEST_CASE("bce after sigmoid") {
    auto x = random_tensor({1, 1, 3, 3}, 71, -2, 2);
    Tensor<double> t({1, 1, 3, 3}, std::vector<double>{0, 1, 1, 0, 1, 0, 0, 0, 1});
    CHECK(grad_check([&](const Tensor<double>& v) { return bce_loss(sigmoid(v), t); }, x) < 1e-4);
  }

  TEST_CASE("conv then sum") {
    auto x = random_tensor({1, 2, 5, 5}, 72);
    auto w = random_tensor({3, 2, 3, 3}, 73);
    CHECK(grad_check([&](const Tensor<double>& v) { return sum(conv2d<double>(v, w, std::nullopt)); }, x) < 1e-4);
  }

  TEST_CASE("non-scalar function is rejected") {
    auto x = random_tensor({2}, 74);
    CHECK_THROWS_AS(grad_check([](const Tensor<double>& v) { return relu(v); }, x), ShapeError);
  }

  TEST_CASE("finite-difference agreement for every differentiable op over 20 seeds") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      CAPTURE(seed);
      auto x = random_tensor({2, 3, 5, 5}, seed * 1000);
      auto x2 = random_tensor({2, 3, 5, 5}, seed * 1000 + 1);
      auto w = random_tensor({4, 3, 3, 3}, seed * 1000 + 2);
      auto b = random_tensor({4}, seed * 1000 + 3);
      auto gamma = random_tensor({3}, seed * 1000 + 4, 0.5, 1.5);
      auto beta = random_tensor({3}, seed * 1000 + 5);
      auto gate = random_tensor({2, 3, 1, 1}, seed * 1000 + 6);
      auto target = random_tensor({2, 3, 5, 5}, seed * 1000 + 7, 0, 1);
      for (auto& v : target.data()) v = v > 0.5 ? 1.0 : 0.0;
      const std::uint64_t ws = seed * 1000 + 8;

      for (int stride : {1, 2})
        for (int dilation : {1, 2}) {
          Conv2dOptions o{.stride = stride, .dilation = dilation};
          CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(conv2d<double>(v, w, b, o), ws); }, x) <
                1e-4);
          CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(conv2d<double>(x, v, b, o), ws); }, w) <
                1e-4);
          CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(conv2d<double>(x, w, v, o), ws); }, b) <
                1e-4);
        }
      Conv2dOptions direct{.stride = 2, .dilation = 2, .algorithm = ConvAlgorithm::Direct};
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(conv2d<double>(v, w, b, direct), ws); }, x) <
            1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(conv2d<double>(x, v, b, direct), ws); }, w) <
            1e-4);

      BatchNormStats<double> stats(3);
      CHECK(grad_check([&](const Tensor<double>& v) {
              return weighted_sum(batch_norm(v, gamma, beta, stats, Mode::Train), ws);
            }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) {
              return weighted_sum(batch_norm(x, v, beta, stats, Mode::Train), ws);
            }, gamma) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) {
              return weighted_sum(batch_norm(x, gamma, v, stats, Mode::Train), ws);
            }, beta) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) {
              return weighted_sum(batch_norm(v, gamma, beta, stats, Mode::Eval), ws);
            }, x) < 1e-4);

      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(relu(v), ws); }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(sigmoid(v), ws); }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(global_avg_pool(v), ws); }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(nearest_upsample(v, 2), ws); }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(concat(v, x2), ws); }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(concat(x2, v), ws); }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(add(v, x2), ws); }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(mul(v, x2), ws); }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(mul(x, v), ws); }, gate) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(add(x, v), ws); }, gate) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return weighted_sum(scale(v, -1.7), ws); }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return mean(v); }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return bce_loss(sigmoid(v), target); }, x) < 1e-4);
      CHECK(grad_check([&](const Tensor<double>& v) { return dice_loss(sigmoid(v), target); }, x) < 1e-4);
    }
  }
}
