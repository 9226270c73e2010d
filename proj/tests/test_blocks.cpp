#include <cmath>

#include "doctest.h"
#include "resunetpp/blocks.hpp"
#include "test_util.hpp"

using namespace resunetpp;
using resunetpp::testing::random_tensor;

namespace {

BlockSpec stem(Index in, Index out) { return {.kind = BlockKind::Stem, .in_channels = in, .out_channels = out}; }
BlockSpec residual(Index in, Index out, int stride = 1) {
  return {.kind = BlockKind::Residual, .in_channels = in, .out_channels = out, .stride = stride};
}
BlockSpec se(Index c, int r) {
  return {.kind = BlockKind::SqueezeExcite, .in_channels = c, .out_channels = c, .se_reduction = r};
}
BlockSpec aspp(Index in, Index out, std::vector<int> rates) {
  return {.kind = BlockKind::Aspp, .in_channels = in, .out_channels = out, .dilation_rates = std::move(rates)};
}
BlockSpec attention(Index skip, Index dec) {
  return {.kind = BlockKind::Attention, .in_channels = skip, .out_channels = dec};
}

// Overwrites every trainable tensor with uniform noise so that gamma/beta and
// biases are exercised too, not just conv weights.
template <typename Block>
ParameterSet<double> randomize(Block& b, std::uint64_t seed) {
  ParameterSet<double> p;
  b.collect("b", p);
  for (auto& t : p.trainable) {
    auto r = random_tensor(t.tensor.shape(), seed++, -0.8, 0.8);
    std::copy(r.data().begin(), r.data().end(), t.tensor.data().begin());
  }
  return p;
}

Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  return sum(mul(y, random_tensor(y.shape(), seed)));
}

bool all_equal(std::span<const double> a, std::span<const double> b, double tol = 0) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > tol) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("spec validation") {
  TEST_CASE("inconsistent specs are rejected") {
    CHECK_THROWS_AS(se(8, 16).validate(), ConfigError);
    CHECK_THROWS_AS(aspp(4, 4, {}).validate(), ConfigError);
    CHECK_THROWS_AS(aspp(4, 4, {6, 1}).validate(), ConfigError);
    CHECK_THROWS_AS(aspp(4, 4, {2, 2}).validate(), ConfigError);
    CHECK_THROWS_AS(residual(4, 0).validate(), ConfigError);
    CHECK_THROWS_AS(residual(4, 4, 0).validate(), ConfigError);
    Initializer init(1);
    CHECK_THROWS_AS(ResidualBlock<double>(residual(4, 4, 0), init), ConfigError);
    CHECK_THROWS_AS(StemBlock<double>(residual(4, 4), init), ConfigError);
    CHECK_NOTHROW(se(16, 16).validate());
  }
}

TEST_SUITE("stem") {
  TEST_CASE("zero weights and zero input give zero output") {
    Initializer init(2);
    StemBlock<double> b(stem(3, 4), init);
    ParameterSet<double> p;
    b.collect("stem", p);
    fill_parameters(p, 0.0);
    auto y = b(Tensor<double>::zeros({2, 3, 6, 6}), Mode::Train);
    CHECK(y.shape() == Shape{2, 4, 6, 6});
    for (double v : y.data()) CHECK(v == 0.0);
  }

  TEST_CASE("1x3x64x64 with 32 filters keeps the spatial size") {
    Initializer init(3);
    StemBlock<float> b(stem(3, 32), init);
    auto y = b(random_tensor<float>({1, 3, 64, 64}, 4), Mode::Train);
    CHECK(y.shape() == Shape{1, 32, 64, 64});
  }

  TEST_CASE("channel mismatch") {
    Initializer init(5);
    StemBlock<double> b(stem(3, 4), init);
    CHECK_THROWS_AS(b(Tensor<double>::zeros({1, 2, 4, 4}), Mode::Train), ShapeError);
  }
}

TEST_SUITE("residual") {
  TEST_CASE("zero main path reduces to the shortcut projection") {
    Initializer init(6);
    ResidualBlock<double> b(residual(3, 5, 2), init);
    std::fill(b.conv2.weight.data().begin(), b.conv2.weight.data().end(), 0.0);
    auto x = random_tensor({2, 3, 8, 8}, 7);
    auto y = b(x, Mode::Train);
    BatchNormStats<double> fresh(5);
    auto expected = batch_norm(b.shortcut(x), b.shortcut_bn.gamma, b.shortcut_bn.beta, fresh, Mode::Train);
    CHECK(y.shape() == Shape{2, 5, 4, 4});
    CHECK(all_equal(y.data(), expected.data()));
  }

  TEST_CASE("stride 2 halves H and W, stride 1 preserves them") {
    Initializer init(8);
    ResidualBlock<double> s2(residual(2, 3, 2), init);
    ResidualBlock<double> s1(residual(2, 3, 1), init);
    auto x = random_tensor({3, 2, 10, 6}, 9);
    CHECK(s2(x, Mode::Train).shape() == Shape{3, 3, 5, 3});
    CHECK(s1(x, Mode::Train).shape() == Shape{3, 3, 10, 6});
  }
}

TEST_SUITE("squeeze-excite") {
  TEST_CASE("zero excitation weights gate at 0.5") {
    Initializer init(10);
    SqueezeExciteBlock<double> b(se(32, 16), init);
    std::fill(b.excite.weight.data().begin(), b.excite.weight.data().end(), 0.0);
    auto x = random_tensor({2, 32, 3, 3}, 11);
    auto y = b(x, Mode::Train);
    for (std::size_t i = 0; i < y.data().size(); ++i) CHECK(y.data()[i] == x.data()[i] * 0.5);
  }

  TEST_CASE("a channel whose gate saturates at 1 passes through unchanged") {
    Initializer init(12);
    SqueezeExciteBlock<double> b(se(16, 4), init);
    std::fill(b.excite.weight.data().begin(), b.excite.weight.data().end(), 0.0);
    (*b.excite.bias).data()[5] = 1000.0;
    auto x = random_tensor({1, 16, 4, 4}, 13);
    auto y = b(x, Mode::Train);
    for (Index i = 0; i < 4; ++i)
      for (Index j = 0; j < 4; ++j) CHECK(y.at(0, 5, i, j) == x.at(0, 5, i, j));
  }

  TEST_CASE("gate values lie strictly in (0, 1)") {
    Initializer init(14);
    SqueezeExciteBlock<double> b(se(16, 4), init);
    auto g = b.gate(random_tensor({2, 16, 5, 5}, 15, -3, 3));
    CHECK(g.shape() == Shape{2, 16, 1, 1});
    for (double v : g.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }

  TEST_CASE("too few channels for the reduction") {
    Initializer init(16);
    CHECK_THROWS_AS(SqueezeExciteBlock<double>(se(8, 16), init), ConfigError);
  }
}

TEST_SUITE("aspp") {
  TEST_CASE("512 -> 64 channels at 16x16") {
    Initializer init(17);
    AsppBlock<float> b(aspp(512, 64, {1, 6, 12, 18}), init);
    auto y = b(random_tensor<float>({1, 512, 16, 16}, 18), Mode::Train);
    CHECK(y.shape() == Shape{1, 64, 16, 16});
  }

  TEST_CASE("a single rate degenerates to conv -> BN -> conv1x1") {
    Initializer init(19);
    AsppBlock<double> b(aspp(3, 4, {1}), init);
    randomize(b, 20);
    auto x = random_tensor({2, 3, 6, 6}, 21);
    auto y = b(x, Mode::Train);
    BatchNormStats<double> fresh(4);
    auto& bn = b.branch_bns[0];
    auto h = batch_norm(b.branch_convs[0](x), bn.gamma, bn.beta, fresh, Mode::Train);
    auto expected = conv2d<double>(h, b.project.weight, b.project.bias);
    CHECK(all_equal(y.data(), expected.data()));
  }

  TEST_CASE("branch fusion equals an explicit loop over branches") {
    Initializer init(22);
    AsppBlock<double> b(aspp(3, 5, {1, 2, 3}), init);
    randomize(b, 23);
    auto x = random_tensor({2, 3, 7, 7}, 24);
    auto y = b(x, Mode::Train);

    // Oracle: accumulate each branch separately, then apply the projection
    // with the naive direct path.
    std::vector<double> fused(static_cast<std::size_t>(2 * 5 * 7 * 7), 0.0);
    for (std::size_t i = 0; i < 3; ++i) {
      BatchNormStats<double> fresh(5);
      auto& bn = b.branch_bns[i];
      Conv2dOptions o{.dilation = b.spec().dilation_rates[i], .algorithm = ConvAlgorithm::Direct};
      auto br = batch_norm(conv2d<double>(x, b.branch_convs[i].weight, b.branch_convs[i].bias, o), bn.gamma, bn.beta,
                           fresh, Mode::Train);
      for (std::size_t k = 0; k < fused.size(); ++k) fused[k] += br.data()[k];
    }
    Tensor<double> f({2, 5, 7, 7}, fused);
    auto expected = conv2d<double>(f, b.project.weight, b.project.bias, {.algorithm = ConvAlgorithm::Direct});
    CHECK(all_equal(y.data(), expected.data(), 1e-10));
  }

  TEST_CASE("zero weights give zero output") {
    Initializer init(25);
    AsppBlock<double> b(aspp(2, 3, {1, 2}), init);
    ParameterSet<double> p;
    b.collect("a", p);
    fill_parameters(p, 0.0);
    auto y = b(random_tensor({1, 2, 4, 4}, 26), Mode::Train);
    for (double v : y.data()) CHECK(v == 0.0);
  }
}

TEST_SUITE("attention") {
  TEST_CASE("map forced to ones returns the decoder input") {
    Initializer init(27);
    AttentionBlock<double> b(attention(3, 4), init);
    std::fill(b.gate.weight.data().begin(), b.gate.weight.data().end(), 0.0);
    (*b.gate.bias).data()[0] = 1000.0;
    auto skip = random_tensor({2, 3, 4, 4}, 28);
    auto dec = random_tensor({2, 4, 4, 4}, 29);
    CHECK(all_equal(b(skip, dec, Mode::Train).data(), dec.data()));
  }

  TEST_CASE("map forced to zeros returns zero") {
    Initializer init(30);
    AttentionBlock<double> b(attention(3, 4), init);
    std::fill(b.gate.weight.data().begin(), b.gate.weight.data().end(), 0.0);
    (*b.gate.bias).data()[0] = -1000.0;
    auto y = b(random_tensor({1, 3, 4, 4}, 31), random_tensor({1, 4, 4, 4}, 32), Mode::Train);
    for (double v : y.data()) CHECK(std::abs(v) < 1e-300);
  }

  TEST_CASE("zero weights halve the decoder input") {
    Initializer init(33);
    AttentionBlock<double> b(attention(3, 4), init);
    ParameterSet<double> p;
    b.collect("att", p);
    fill_parameters(p, 0.0);
    auto dec = random_tensor({1, 4, 4, 4}, 34);
    auto y = b(random_tensor({1, 3, 4, 4}, 35), dec, Mode::Train);
    for (std::size_t i = 0; i < y.data().size(); ++i) CHECK(y.data()[i] == dec.data()[i] * 0.5);
  }

  TEST_CASE("map values lie in (0, 1) with one channel") {
    Initializer init(36);
    AttentionBlock<double> b(attention(3, 4), init);
    auto a = b.attention_map(random_tensor({2, 3, 5, 5}, 37), random_tensor({2, 4, 5, 5}, 38), Mode::Train);
    CHECK(a.shape() == Shape{2, 1, 5, 5});
    for (double v : a.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }

  TEST_CASE("spatial mismatch") {
    Initializer init(39);
    AttentionBlock<double> b(attention(3, 4), init);
    CHECK_THROWS_AS(b(Tensor<double>::zeros({1, 3, 4, 4}), Tensor<double>::zeros({1, 4, 2, 2}), Mode::Train),
                    ShapeError);
  }

  TEST_CASE("gradient reaches both inputs") {
    Initializer init(40);
    AttentionBlock<double> b(attention(3, 4), init);
    auto skip = random_tensor({1, 3, 4, 4}, 41, -1, 1, true);
    auto dec = random_tensor({1, 4, 4, 4}, 42, -1, 1, true);
    Tape<double> tape;
    Tensor<double> loss;
    {
      TapeScope<double> scope(tape);
      loss = weighted_sum(b(skip, dec, Mode::Train), 43);
    }
    backward(loss, tape);
    auto nonzero = [](std::span<const double> g) {
      double m = 0;
      for (double v : g) m = std::max(m, std::abs(v));
      return m > 1e-8;
    };
    CHECK(nonzero(skip.grad()));
    CHECK(nonzero(dec.grad()));
  }
}

// Every block: inputs and every trainable tensor against central differences.
TEST_CASE("finite-difference agreement for every block over 20 seeds") {
  double worst = 0;
  auto check_params = [&](ParameterSet<double>& p, const std::function<Tensor<double>()>& f) {
    for (auto& t : p.trainable) {
      const double e = grad_check([&](const Tensor<double>&) { return f(); }, t.tensor);
      INFO(t.name);
      CHECK(e < 1e-4);
      worst = std::max(worst, e);
    }
  };
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CAPTURE(seed);
    const std::uint64_t s = seed * 100;
    Initializer init(s);
    auto x = random_tensor({2, 3, 6, 6}, s + 1);
    auto x4 = random_tensor({2, 4, 6, 6}, s + 2);

    StemBlock<double> st(stem(3, 4), init);
    auto pst = randomize(st, s + 10);
    auto fst = [&](const Tensor<double>& v) { return weighted_sum(st(v, Mode::Train), s + 3); };
    CHECK(grad_check(fst, x) < 1e-4);
    check_params(pst, [&] { return fst(x); });

    ResidualBlock<double> rb(residual(3, 4, 2), init);
    auto prb = randomize(rb, s + 20);
    auto frb = [&](const Tensor<double>& v) { return weighted_sum(rb(v, Mode::Train), s + 4); };
    CHECK(grad_check(frb, x) < 1e-4);
    check_params(prb, [&] { return frb(x); });

    SqueezeExciteBlock<double> sb(se(4, 2), init);
    auto psb = randomize(sb, s + 30);
    auto fsb = [&](const Tensor<double>& v) { return weighted_sum(sb(v, Mode::Train), s + 5); };
    CHECK(grad_check(fsb, x4) < 1e-4);
    check_params(psb, [&] { return fsb(x4); });

    AsppBlock<double> ab(aspp(3, 4, {1, 2, 3}), init);
    auto pab = randomize(ab, s + 40);
    auto fab = [&](const Tensor<double>& v) { return weighted_sum(ab(v, Mode::Train), s + 6); };
    CHECK(grad_check(fab, x) < 1e-4);
    check_params(pab, [&] { return fab(x); });

    AttentionBlock<double> at(attention(3, 4), init);
    auto pat = randomize(at, s + 50);
    auto fat_skip = [&](const Tensor<double>& v) { return weighted_sum(at(v, x4, Mode::Train), s + 7); };
    auto fat_dec = [&](const Tensor<double>& v) { return weighted_sum(at(x, v, Mode::Train), s + 7); };
    CHECK(grad_check(fat_skip, x) < 1e-4);
    CHECK(grad_check(fat_dec, x4) < 1e-4);
    check_params(pat, [&] { return fat_dec(x4); });
  }
  MESSAGE("worst relative error over block parameters: " << worst);
}
