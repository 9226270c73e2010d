#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "resunetpp/model.hpp"
#include "test_util.hpp"

using namespace resunetpp;
using resunetpp::testing::random_tensor;

namespace fs = std::filesystem;

namespace {

// Hand-derived parameter counts, written out independently of the layer code.
Index conv(Index k, Index in, Index out) { return k * k * in * out + out; }
Index bn(Index c) { return 2 * c; }
Index stem_count(Index in, Index out) { return conv(3, in, out) + bn(out) + conv(3, out, out) + conv(1, in, out) + bn(out); }
Index residual_count(Index in, Index out) {
  return bn(in) + conv(3, in, out) + bn(out) + conv(3, out, out) + conv(1, in, out) + bn(out);
}
Index se_count(Index c, Index r) { return conv(1, c, c / r) + conv(1, c / r, c); }
Index aspp_count(Index in, Index out, Index rates) { return rates * (conv(3, in, out) + bn(out)) + conv(1, out, out); }
Index attention_count(Index skip, Index dec) {
  return bn(skip) + conv(3, skip, dec) + bn(dec) + conv(3, dec, dec) + conv(1, dec, 1);
}

Index model_count(const std::vector<Index>& f) {
  Index n = stem_count(3, f[0]);
  for (int i = 0; i < 3; ++i) n += residual_count(f[i], f[i + 1]) + se_count(f[i + 1], 16);
  n += aspp_count(f[3], f[4], 4);
  Index dec = f[4];
  for (int i = 0; i < 3; ++i) {
    n += attention_count(f[2 - i], dec) + residual_count(dec + f[2 - i], f[3 - i]);
    dec = f[3 - i];
  }
  return n + aspp_count(f[1], f[0], 4) + conv(1, f[0], 1);
}

const std::vector<Index> kSmall{8, 16, 32, 64, 128};

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "resunetpp_test_model";
  fs::create_directories(dir);
  return dir / name;
}

bool same_bytes(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::vector<float> flat_parameters(ResUNetPP<float>& m) {
  std::vector<float> out;
  for (auto& p : m.parameters().trainable) out.insert(out.end(), p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

}  // namespace

TEST_SUITE("parameter counting") {
  TEST_CASE("single conv 3x3, 3 -> 8 with bias") {
    Initializer init(1);
    ConvLayer<float> c(3, 8, 3, init);
    ParameterSet<float> p;
    c.collect("c", p);
    CHECK(count_parameters(p) == 224);
  }

  TEST_CASE("single batch norm over 16 channels") {
    BatchNormLayer<float> b(16);
    ParameterSet<float> p;
    b.collect("bn", p);
    CHECK(count_parameters(p) == 32);
    CHECK(p.running.size() == 1);
  }

  TEST_CASE("two-block toy: stem 3 -> 8 then residual 8 -> 16") {
    Initializer init(2);
    StemBlock<float> s({.kind = BlockKind::Stem, .in_channels = 3, .out_channels = 8}, init);
    ResidualBlock<float> r({.kind = BlockKind::Residual, .in_channels = 8, .out_channels = 16, .stride = 2}, init);
    ParameterSet<float> p;
    s.collect("stem", p);
    r.collect("res", p);
    // stem: 224 + 16 + 584 + 32 + 16; residual: 16 + 1168 + 32 + 2320 + 144 + 32
    CHECK(count_parameters(p) == 872 + 3712);
    CHECK(count_parameters(p) == stem_count(3, 8) + residual_count(8, 16));
  }

  TEST_CASE("whole model matches the closed form") {
    ResUNetPP<float> small(ModelConfig{.filters = kSmall}, 0);
    CHECK(small.count_parameters() == model_count(kSmall));
    ResUNetPP<float> wide(ModelConfig{}, 0);
    CHECK(wide.count_parameters() == model_count({32, 64, 128, 256, 512}));
  }

  TEST_CASE("summary reports per-block counts, the total and the delta") {
    ResUNetPP<float> m(ModelConfig{}, 0);
    const auto s = m.summary();
    Index sum = 0;
    for (const auto& b : s.blocks) sum += b.parameters;
    CHECK(sum == s.total);
    CHECK(s.total == m.count_parameters());
    CHECK(s.delta_vs_reference == s.total - 16'228'001);
    CHECK(s.blocks.size() == 16);
    CHECK(s.blocks.front().name == "stem");
    CHECK(s.blocks.back().name == "output");
    const auto text = s.to_text();
    CHECK(text.find("total_parameters " + std::to_string(s.total)) != std::string::npos);
    CHECK(text.find("delta_vs_reference " + std::to_string(s.delta_vs_reference)) != std::string::npos);
    CHECK(text == ResUNetPP<float>(ModelConfig{}, 0).summary().to_text());
  }
}

TEST_SUITE("topology") {
  TEST_CASE("graph lists the blocks in order") {
    ResUNetPP<float> m(ModelConfig{.filters = kSmall}, 0);
    std::vector<std::string> names;
    for (const auto& n : m.graph()) names.push_back(n.name);
    CHECK(names == std::vector<std::string>{"stem", "encoder1", "se1", "encoder2", "se2", "encoder3", "se3", "bridge",
                                            "attention1", "decoder1", "attention2", "decoder2", "attention3",
                                            "decoder3", "head"});
    const auto g = m.graph();
    CHECK(g[7].spec.in_channels == 64);
    CHECK(g[7].spec.out_channels == 128);
    CHECK(g[8].spec.in_channels == 32);   // skip from encoder2
    CHECK(g[8].spec.out_channels == 128); // upsampled bridge
    CHECK(g[9].spec.in_channels == 160);
    CHECK(g[9].spec.out_channels == 64);
    CHECK(g[14].spec.out_channels == 8);
  }

  TEST_CASE("bad configurations") {
    CHECK_THROWS_AS(build_resunetpp<float>({8, 16, 32, 64}, 0), ConfigError);
    CHECK_THROWS_AS(build_resunetpp<float>({8, 16, 0, 64, 128}, 0), ConfigError);
    CHECK_THROWS_AS(ResUNetPP<float>(ModelConfig{.filters = {8, 8, 8, 8, 8}}, 0), ConfigError);  // SE 8/16
  }
}

TEST_SUITE("forward") {
  TEST_CASE("small model on 1x3x64x64 gives probabilities of the same size") {
    auto m = build_resunetpp<float>(kSmall, 3);
    auto y = m.forward(random_tensor<float>({1, 3, 64, 64}, 4, 0, 1), Mode::Train);
    CHECK(y.shape() == Shape{1, 1, 64, 64});
    for (float v : y.data()) {
      REQUIRE(v > 0.0f);
      REQUIRE(v < 1.0f);
    }
  }

  TEST_CASE("H x W -> H x W for sizes divisible by 8, including 256x256") {
    auto m = build_resunetpp<float>(kSmall, 5);
    for (auto [h, w] : {std::pair<Index, Index>{8, 8}, {16, 40}, {256, 256}}) {
      auto y = m.forward(random_tensor<float>({1, 3, h, w}, 6, 0, 1), Mode::Train);
      CHECK(y.shape() == Shape{1, 1, h, w});
    }
  }

  TEST_CASE("indivisible spatial size and wrong channel count") {
    auto m = build_resunetpp<float>(kSmall, 7);
    CHECK_THROWS_AS(m.forward(Tensor<float>::zeros({1, 3, 60, 64}), Mode::Train), ShapeError);
    CHECK_THROWS_AS(m.forward(Tensor<float>::zeros({1, 1, 64, 64}), Mode::Train), ShapeError);
  }

  TEST_CASE("eval before any training forward has no running statistics") {
    auto m = build_resunetpp<float>(kSmall, 8);
    CHECK_THROWS_AS(m.forward(Tensor<float>::zeros({1, 3, 16, 16}), Mode::Eval), StateError);
  }

  TEST_CASE("same seed gives identical parameter bytes, different seed does not") {
    auto a = build_resunetpp<float>(kSmall, 9);
    auto b = build_resunetpp<float>(kSmall, 9);
    auto c = build_resunetpp<float>(kSmall, 10);
    auto pa = flat_parameters(a), pb = flat_parameters(b), pc = flat_parameters(c);
    CHECK(same_bytes(pa, pb));
    CHECK_FALSE(same_bytes(pa, pc));
  }

  TEST_CASE("eval mode is bitwise deterministic") {
    auto m = build_resunetpp<float>(kSmall, 11);
    m.forward(random_tensor<float>({2, 3, 32, 32}, 12, 0, 1), Mode::Train);
    auto x = random_tensor<float>({1, 3, 32, 32}, 13, 0, 1);
    auto y1 = m.forward(x, Mode::Eval);
    auto y2 = m.forward(x, Mode::Eval);
    CHECK(same_bytes(y1.data(), y2.data()));
  }

  TEST_CASE("skip connections before SE change the output") {
    ModelConfig before{.filters = kSmall, .skip_before_se = true};
    ResUNetPP<float> a(ModelConfig{.filters = kSmall}, 14), b(before, 14);
    CHECK(a.count_parameters() == b.count_parameters());
    auto x = random_tensor<float>({1, 3, 16, 16}, 15, 0, 1);
    auto ya = a.forward(x, Mode::Train), yb = b.forward(x, Mode::Train);
    CHECK_FALSE(same_bytes(ya.data(), yb.data()));
  }
}

TEST_SUITE("weights file") {
  TEST_CASE("round trip is bit-exact for parameters, statistics and predictions") {
    auto m = build_resunetpp<float>(kSmall, 20);
    m.forward(random_tensor<float>({2, 3, 32, 32}, 21, 0, 1), Mode::Train);
    const auto path = temp_path("roundtrip.bin");
    save_weights(m, path, {{"note", "unit test"}});

    auto x = random_tensor<float>({1, 3, 32, 32}, 22, 0, 1);
    auto expected = m.forward(x, Mode::Eval);

    auto loaded = load_weights<float>(path);
    CHECK(same_bytes(flat_parameters(m), flat_parameters(loaded)));
    CHECK(same_bytes(loaded.forward(x, Mode::Eval).data(), expected.data()));

    auto other = build_resunetpp<float>(kSmall, 99);
    load_weights_into(other, path);
    CHECK(same_bytes(other.forward(x, Mode::Eval).data(), expected.data()));

    const auto meta = read_weight_metadata(path);
    CHECK(meta.at("note") == "unit test");
    CHECK(meta.at("model.filters") == "8,16,32,64,128");
    CHECK(meta.at("dtype") == "f32");
  }

  TEST_CASE("double precision round trip") {
    auto m = build_resunetpp<double>(kSmall, 23);
    const auto path = temp_path("roundtrip64.bin");
    save_weights(m, path);
    auto loaded = load_weights<double>(path);
    auto x = random_tensor<double>({1, 3, 16, 16}, 24, 0, 1);
    auto a = m.forward(x, Mode::Train), b = loaded.forward(x, Mode::Train);
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(double)) == 0);
    CHECK_THROWS_AS(load_weights<float>(path), FormatError);
  }

  TEST_CASE("mismatched topology names the offending tensor and leaves the model untouched") {
    auto m = build_resunetpp<float>(kSmall, 25);
    const auto path = temp_path("small.bin");
    save_weights(m, path);
    auto wider = build_resunetpp<float>({8, 16, 32, 64, 256}, 26);
    const auto before = flat_parameters(wider);
    try {
      load_weights_into(wider, path);
      FAIL("expected a shape error");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("bridge.") != std::string::npos);
    }
    CHECK(same_bytes(before, flat_parameters(wider)));
  }

  TEST_CASE("truncated or corrupted files are rejected") {
    auto m = build_resunetpp<float>(kSmall, 27);
    const auto path = temp_path("full.bin");
    save_weights(m, path);
    const auto size = fs::file_size(path);

    const auto cut = temp_path("cut.bin");
    fs::copy_file(path, cut, fs::copy_options::overwrite_existing);
    fs::resize_file(cut, size / 2);
    auto target = build_resunetpp<float>(kSmall, 28);
    const auto before = flat_parameters(target);
    CHECK_THROWS_AS(load_weights_into(target, cut), FormatError);
    CHECK_THROWS_AS(load_weights<float>(cut), FormatError);
    CHECK(same_bytes(before, flat_parameters(target)));

    const auto flipped = temp_path("flipped.bin");
    fs::copy_file(path, flipped, fs::copy_options::overwrite_existing);
    {
      std::fstream f(flipped, std::ios::in | std::ios::out | std::ios::binary);
      f.seekp(static_cast<std::streamoff>(size - 100));
      f.put('\x5a');
    }
    CHECK_THROWS_AS(load_weights_into(target, flipped), FormatError);
    CHECK(same_bytes(before, flat_parameters(target)));

    CHECK_THROWS_AS(load_weights<float>(temp_path("does_not_exist.bin")), FormatError);
  }
}
