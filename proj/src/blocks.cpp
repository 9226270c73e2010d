#include "resunetpp/blocks.hpp"

#include <cmath>

namespace resunetpp {

template <typename T>
void Initializer::he_uniform(Tensor<T>& w, Index fan_in) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.data()) {
    // 53 random bits -> [0, 1), independent of the standard library's
    // distribution implementation.
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    v = static_cast<T>((2.0 * u - 1.0) * limit);
  }
}

template void Initializer::he_uniform<float>(Tensor<float>&, Index);
template void Initializer::he_uniform<double>(Tensor<double>&, Index);

template <typename T>
ConvLayer<T>::ConvLayer(Index in_c, Index out_c, Index kernel, Initializer& init, Conv2dOptions opts, bool with_bias)
    : weight(Shape{out_c, in_c, kernel, kernel}, T(0), true), options(opts) {
  init.he_uniform(weight, in_c * kernel * kernel);
  if (with_bias) bias = Tensor<T>(Shape{out_c}, T(0), true);
}

template <typename T>
void ConvLayer<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  out.trainable.push_back({prefix + ".weight", weight});
  if (bias) out.trainable.push_back({prefix + ".bias", *bias});
}

template <typename T>
BatchNormLayer<T>::BatchNormLayer(Index channels)
    : gamma(Shape{channels}, T(1), true), beta(Shape{channels}, T(0), true), stats(channels) {}

template <typename T>
void BatchNormLayer<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  out.trainable.push_back({prefix + ".gamma", gamma});
  out.trainable.push_back({prefix + ".beta", beta});
  out.running.push_back({prefix, &stats});
}

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::Stem: return "stem";
    case BlockKind::Residual: return "residual";
    case BlockKind::SqueezeExcite: return "se";
    case BlockKind::Aspp: return "aspp";
    case BlockKind::Attention: return "attention";
  }
  return "unknown";
}

void BlockSpec::validate() const {
  const std::string name = to_string(kind);
  if (in_channels < 1) throw ConfigError(name + " block: in_channels must be >= 1");
  if (out_channels < 1) throw ConfigError(name + " block: out_channels must be >= 1");
  if (stride < 1) throw ConfigError(name + " block: stride must be >= 1");
  if (kind == BlockKind::SqueezeExcite) {
    if (se_reduction < 1 || in_channels / se_reduction < 1) {
      throw ConfigError("se block: " + std::to_string(in_channels) + " channels with reduction " +
                        std::to_string(se_reduction) + " leaves no hidden units");
    }
    if (in_channels != out_channels) throw ConfigError("se block: in_channels must equal out_channels");
  }
  if (kind == BlockKind::Aspp) {
    if (dilation_rates.empty()) throw ConfigError("aspp block: dilation_rates is empty");
    for (std::size_t i = 0; i < dilation_rates.size(); ++i) {
      if (dilation_rates[i] < 1) throw ConfigError("aspp block: dilation rates must be >= 1");
      if (i > 0 && dilation_rates[i] <= dilation_rates[i - 1]) {
        throw ConfigError("aspp block: dilation rates must be strictly increasing");
      }
    }
  }
}

namespace {

void require_kind(const BlockSpec& spec, BlockKind kind) {
  if (spec.kind != kind) {
    throw ConfigError("expected a " + to_string(kind) + " spec, got " + to_string(spec.kind));
  }
  spec.validate();
}

template <typename T>
void require_channels(const Tensor<T>& x, Index channels, const char* block) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ShapeError(std::string(block) + " block expects " + std::to_string(channels) + " input channels, got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
StemBlock<T>::StemBlock(BlockSpec spec, Initializer& init) : spec_(std::move(spec)) {
  require_kind(spec_, BlockKind::Stem);
  const Index in = spec_.in_channels, out = spec_.out_channels;
  conv1 = ConvLayer<T>(in, out, 3, init);
  bn1 = BatchNormLayer<T>(out);
  conv2 = ConvLayer<T>(out, out, 3, init);
  shortcut = ConvLayer<T>(in, out, 1, init);
  shortcut_bn = BatchNormLayer<T>(out);
}

template <typename T>
Tensor<T> StemBlock<T>::operator()(const Tensor<T>& x, Mode mode) {
  require_channels(x, spec_.in_channels, "stem");
  auto main = conv2(relu(bn1(conv1(x), mode)));
  auto skip = shortcut_bn(shortcut(x), mode);
  return add(main, skip);
}

template <typename T>
void StemBlock<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  shortcut.collect(prefix + ".shortcut", out);
  shortcut_bn.collect(prefix + ".shortcut_bn", out);
}

// ---------------------------------------------------------------------------

template <typename T>
ResidualBlock<T>::ResidualBlock(BlockSpec spec, Initializer& init) : spec_(std::move(spec)) {
  require_kind(spec_, BlockKind::Residual);
  const Index in = spec_.in_channels, out = spec_.out_channels;
  bn1 = BatchNormLayer<T>(in);
  conv1 = ConvLayer<T>(in, out, 3, init, {.stride = spec_.stride});
  bn2 = BatchNormLayer<T>(out);
  conv2 = ConvLayer<T>(out, out, 3, init);
  shortcut = ConvLayer<T>(in, out, 1, init, {.stride = spec_.stride});
  shortcut_bn = BatchNormLayer<T>(out);
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x, Mode mode) {
  require_channels(x, spec_.in_channels, "residual");
  auto h = conv1(relu(bn1(x, mode)));
  auto main = conv2(relu(bn2(h, mode)));
  auto skip = shortcut_bn(shortcut(x), mode);
  return add(main, skip);
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  bn1.collect(prefix + ".bn1", out);
  conv1.collect(prefix + ".conv1", out);
  bn2.collect(prefix + ".bn2", out);
  conv2.collect(prefix + ".conv2", out);
  shortcut.collect(prefix + ".shortcut", out);
  shortcut_bn.collect(prefix + ".shortcut_bn", out);
}

// ---------------------------------------------------------------------------

template <typename T>
SqueezeExciteBlock<T>::SqueezeExciteBlock(BlockSpec spec, Initializer& init) : spec_(std::move(spec)) {
  require_kind(spec_, BlockKind::SqueezeExcite);
  const Index c = spec_.in_channels;
  const Index hidden = c / spec_.se_reduction;
  squeeze = ConvLayer<T>(c, hidden, 1, init);
  excite = ConvLayer<T>(hidden, c, 1, init);
}

template <typename T>
Tensor<T> SqueezeExciteBlock<T>::gate(const Tensor<T>& x) const {
  require_channels(x, spec_.in_channels, "se");
  return sigmoid(excite(relu(squeeze(global_avg_pool(x)))));
}

template <typename T>
Tensor<T> SqueezeExciteBlock<T>::operator()(const Tensor<T>& x, Mode) {
  return mul(x, gate(x));
}

template <typename T>
void SqueezeExciteBlock<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  squeeze.collect(prefix + ".squeeze", out);
  excite.collect(prefix + ".excite", out);
}

// ---------------------------------------------------------------------------

template <typename T>
AsppBlock<T>::AsppBlock(BlockSpec spec, Initializer& init) : spec_(std::move(spec)) {
  require_kind(spec_, BlockKind::Aspp);
  const Index in = spec_.in_channels, out = spec_.out_channels;
  for (int rate : spec_.dilation_rates) {
    branch_convs.emplace_back(in, out, 3, init, Conv2dOptions{.dilation = rate});
    branch_bns.emplace_back(out);
  }
  project = ConvLayer<T>(out, out, 1, init);
}

template <typename T>
Tensor<T> AsppBlock<T>::branch(std::size_t i, const Tensor<T>& x, Mode mode) {
  return branch_bns.at(i)(branch_convs.at(i)(x), mode);
}

template <typename T>
Tensor<T> AsppBlock<T>::operator()(const Tensor<T>& x, Mode mode) {
  require_channels(x, spec_.in_channels, "aspp");
  Tensor<T> fused = branch(0, x, mode);
  for (std::size_t i = 1; i < branch_convs.size(); ++i) fused = add(fused, branch(i, x, mode));
  return project(fused);
}

template <typename T>
void AsppBlock<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  for (std::size_t i = 0; i < branch_convs.size(); ++i) {
    const std::string b = prefix + ".branch" + std::to_string(i);
    branch_convs[i].collect(b + ".conv", out);
    branch_bns[i].collect(b + ".bn", out);
  }
  project.collect(prefix + ".project", out);
}

// ---------------------------------------------------------------------------

template <typename T>
AttentionBlock<T>::AttentionBlock(BlockSpec spec, Initializer& init) : spec_(std::move(spec)) {
  require_kind(spec_, BlockKind::Attention);
  const Index skip_c = spec_.in_channels, dec_c = spec_.out_channels;
  skip_bn = BatchNormLayer<T>(skip_c);
  skip_conv = ConvLayer<T>(skip_c, dec_c, 3, init);
  dec_bn = BatchNormLayer<T>(dec_c);
  dec_conv = ConvLayer<T>(dec_c, dec_c, 3, init);
  gate = ConvLayer<T>(dec_c, 1, 1, init);
}

template <typename T>
Tensor<T> AttentionBlock<T>::attention_map(const Tensor<T>& skip, const Tensor<T>& dec, Mode mode) {
  require_channels(skip, spec_.in_channels, "attention (skip)");
  require_channels(dec, spec_.out_channels, "attention (decoder)");
  if (skip.dim(0) != dec.dim(0) || skip.dim(2) != dec.dim(2) || skip.dim(3) != dec.dim(3)) {
    throw ShapeError("attention block: skip " + shape_str(skip.shape()) + " and decoder " + shape_str(dec.shape()) +
                     " differ in batch or spatial size");
  }
  auto g1 = skip_conv(relu(skip_bn(skip, mode)));
  auto g2 = dec_conv(relu(dec_bn(dec, mode)));
  return sigmoid(gate(relu(add(g1, g2))));
}

template <typename T>
Tensor<T> AttentionBlock<T>::operator()(const Tensor<T>& skip, const Tensor<T>& dec, Mode mode) {
  return mul(dec, attention_map(skip, dec, mode));
}

template <typename T>
void AttentionBlock<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  skip_bn.collect(prefix + ".skip_bn", out);
  skip_conv.collect(prefix + ".skip_conv", out);
  dec_bn.collect(prefix + ".dec_bn", out);
  dec_conv.collect(prefix + ".dec_conv", out);
  gate.collect(prefix + ".gate", out);
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;
template struct BatchNormLayer<float>;
template struct BatchNormLayer<double>;
template class StemBlock<float>;
template class StemBlock<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class SqueezeExciteBlock<float>;
template class SqueezeExciteBlock<double>;
template class AsppBlock<float>;
template class AsppBlock<double>;
template class AttentionBlock<float>;
template class AttentionBlock<double>;

}  // namespace resunetpp
