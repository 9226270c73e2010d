#pragma once

// The five building blocks of the ResUNet++ network.

#include <string>
#include <vector>

#include "resunetpp/layers.hpp"

namespace resunetpp {

enum class BlockKind { Stem, Residual, SqueezeExcite, Aspp, Attention };

std::string to_string(BlockKind kind);

struct BlockSpec {
  BlockKind kind = BlockKind::Residual;
  // For attention blocks: channels of the encoder skip input.
  Index in_channels = 0;
  // For attention blocks: channels of the decoder input, which is also the
  // width of the gated output.
  Index out_channels = 0;
  int stride = 1;
  std::vector<int> dilation_rates;
  int se_reduction = 16;

  // Throws ConfigError when the spec is internally inconsistent.
  void validate() const;
};

// conv3x3 -> BN -> ReLU -> conv3x3, plus a conv1x1 -> BN projection shortcut.
template <typename T>
class StemBlock {
 public:
  StemBlock(BlockSpec spec, Initializer& init);
  Tensor<T> operator()(const Tensor<T>& x, Mode mode);
  void collect(const std::string& prefix, ParameterSet<T>& out);
  const BlockSpec& spec() const { return spec_; }

  ConvLayer<T> conv1, conv2, shortcut;
  BatchNormLayer<T> bn1, shortcut_bn;

 private:
  BlockSpec spec_;
};

// Pre-activation residual unit: (BN -> ReLU -> conv3x3[stride]) then
// (BN -> ReLU -> conv3x3), added to a strided conv1x1 -> BN projection.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock(BlockSpec spec, Initializer& init);
  Tensor<T> operator()(const Tensor<T>& x, Mode mode);
  void collect(const std::string& prefix, ParameterSet<T>& out);
  const BlockSpec& spec() const { return spec_; }

  BatchNormLayer<T> bn1, bn2, shortcut_bn;
  ConvLayer<T> conv1, conv2, shortcut;

 private:
  BlockSpec spec_;
};

// Channel gating: x * sigmoid(W2 relu(W1 gap(x))), W1: C -> C/r, W2: C/r -> C.
template <typename T>
class SqueezeExciteBlock {
 public:
  SqueezeExciteBlock(BlockSpec spec, Initializer& init);
  Tensor<T> operator()(const Tensor<T>& x, Mode mode);
  Tensor<T> gate(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParameterSet<T>& out);
  const BlockSpec& spec() const { return spec_; }

  ConvLayer<T> squeeze, excite;

 private:
  BlockSpec spec_;
};

// Parallel dilated conv3x3 -> BN branches, summed, then a conv1x1 projection.
template <typename T>
class AsppBlock {
 public:
  AsppBlock(BlockSpec spec, Initializer& init);
  Tensor<T> operator()(const Tensor<T>& x, Mode mode);
  Tensor<T> branch(std::size_t i, const Tensor<T>& x, Mode mode);
  void collect(const std::string& prefix, ParameterSet<T>& out);
  const BlockSpec& spec() const { return spec_; }

  std::vector<ConvLayer<T>> branch_convs;
  std::vector<BatchNormLayer<T>> branch_bns;
  ConvLayer<T> project;

 private:
  BlockSpec spec_;
};

// Gates a decoder feature map with a per-pixel map computed from it and the
// encoder skip at the same resolution:
//   a = sigmoid(conv1x1(relu(conv3x3(relu(BN(skip))) + conv3x3(relu(BN(dec))))))
//   out = dec * a
template <typename T>
class AttentionBlock {
 public:
  AttentionBlock(BlockSpec spec, Initializer& init);
  Tensor<T> operator()(const Tensor<T>& skip, const Tensor<T>& dec, Mode mode);
  Tensor<T> attention_map(const Tensor<T>& skip, const Tensor<T>& dec, Mode mode);
  void collect(const std::string& prefix, ParameterSet<T>& out);
  const BlockSpec& spec() const { return spec_; }

  BatchNormLayer<T> skip_bn, dec_bn;
  ConvLayer<T> skip_conv, dec_conv, gate;

 private:
  BlockSpec spec_;
};

}  // namespace resunetpp
