#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "resunetpp/blocks.hpp"

namespace resunetpp {

inline constexpr Index kReferenceParameterCount = 16'228'001;

struct ModelConfig {
  std::vector<Index> filters{32, 64, 128, 256, 512};
  Index input_channels = 3;
  Index output_channels = 1;
  int se_reduction = 16;
  std::vector<int> aspp_rates{1, 6, 12, 18};
  // Take skip connections before the SE gate instead of after it.
  bool skip_before_se = false;

  void validate() const;
};

struct GraphNode {
  std::string name;
  BlockSpec spec;
};

struct BlockSummary {
  std::string name;
  std::string kind;
  std::string shape;  // "in->out" channel transition
  Index parameters = 0;
};

struct ModelSummary {
  std::vector<BlockSummary> blocks;
  Index total = 0;
  // total - kReferenceParameterCount
  Index delta_vs_reference = 0;

  std::string to_text() const;
};

// ResUNet++: stem, three strided residual encoder stages each followed by SE,
// an ASPP bridge, three decoder stages (upsample, attention against the
// encoder skip, concatenate, residual), an ASPP head, conv1x1 and sigmoid.
template <typename T>
class ResUNetPP {
 public:
  explicit ResUNetPP(ModelConfig config, std::uint64_t seed = 0);

  // Output is a per-pixel probability map [N, 1, H, W]. H and W must be
  // divisible by 8.
  Tensor<T> forward(const Tensor<T>& x, Mode mode);

  const ModelConfig& config() const { return config_; }
  std::vector<GraphNode> graph() const;
  ParameterSet<T> parameters();
  Index count_parameters();
  ModelSummary summary();

 private:
  ResUNetPP(const ModelConfig& config, const std::vector<GraphNode>& nodes, Initializer&& init);

  ModelConfig config_;
  StemBlock<T> stem_;
  std::vector<ResidualBlock<T>> encoders_;
  std::vector<SqueezeExciteBlock<T>> se_;
  AsppBlock<T> bridge_;
  std::vector<AttentionBlock<T>> attention_;
  std::vector<ResidualBlock<T>> decoders_;
  AsppBlock<T> head_;
  ConvLayer<T> output_;
};

template <typename T>
ResUNetPP<T> build_resunetpp(const std::vector<Index>& filters, std::uint64_t seed);

// Binary weight container. Layout (little-endian):
//   magic "RUPPWT01"
//   u32 metadata count, then (u32 len, key, u32 len, value) pairs
//   u32 entry count, then per entry: u32 name len, name, u8 dtype (0 f32, 1 f64),
//     u32 rank, u64 dims[rank]
//   raw buffers in entry order
//   u64 FNV-1a checksum over the raw buffers
// Batch-norm running statistics are stored alongside trainable tensors as
// "<bn>.running_mean", "<bn>.running_var" and "<bn>.batches_tracked".
using Metadata = std::map<std::string, std::string>;

template <typename T>
void save_weights(ResUNetPP<T>& model, const std::filesystem::path& path, const Metadata& extra = {});

// Replaces every tensor in `model` or, on any error, leaves it untouched.
template <typename T>
void load_weights_into(ResUNetPP<T>& model, const std::filesystem::path& path);

// Rebuilds the topology from the file's metadata and loads it.
template <typename T>
ResUNetPP<T> load_weights(const std::filesystem::path& path);

Metadata read_weight_metadata(const std::filesystem::path& path);

void encode_config(const ModelConfig& config, Metadata& out);
ModelConfig decode_config(const Metadata& meta);

}  // namespace resunetpp
