#pragma once

// Samples, batching, splitting, resizing and training-time augmentation.
// Everything here is pure computation; file loading lives in io.hpp.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "resunetpp/tensor.hpp"

namespace resunetpp {

struct SegmentationSample {
  Index height = 0;
  Index width = 0;
  std::vector<float> image;         // 3 planes of H x W, values in [0, 1]
  std::vector<std::uint8_t> mask;   // H x W, values in {0, 1}
  std::string dataset_id;
  std::string item_id;

  float& pixel(Index c, Index y, Index x) { return image[static_cast<std::size_t>((c * height + y) * width + x)]; }
  float pixel(Index c, Index y, Index x) const {
    return image[static_cast<std::size_t>((c * height + y) * width + x)];
  }
  std::uint8_t& label(Index y, Index x) { return mask[static_cast<std::size_t>(y * width + x)]; }
  std::uint8_t label(Index y, Index x) const { return mask[static_cast<std::size_t>(y * width + x)]; }

  // Throws DatasetError on inconsistent sizes or a non-binary mask.
  void validate() const;
};

SegmentationSample blank_sample(Index height, Index width);

template <typename T>
struct Batch {
  Tensor<T> images;  // [B, 3, H, W]
  Tensor<T> masks;   // [B, 1, H, W]
};

// All selected samples must share one spatial size.
template <typename T>
Batch<T> make_batch(const std::vector<SegmentationSample>& samples, std::span<const std::size_t> indices);

template <typename T>
Tensor<T> image_tensor(const SegmentationSample& s);  // [1, 3, H, W]
template <typename T>
Tensor<T> mask_tensor(const SegmentationSample& s);   // [1, 1, H, W]

// --- synthetic data -------------------------------------------------------

// Textured background with one or more smooth elliptical blobs; the mask is
// the union of the ellipses.
struct BlobConfig {
  Index size = 64;
  int min_blobs = 1;
  int max_blobs = 2;
  double min_radius = 0.10;  // fraction of size
  double max_radius = 0.25;
  double noise = 0.04;
};

SegmentationSample make_blob_sample(const BlobConfig& config, std::uint64_t seed, std::string item_id);
std::vector<SegmentationSample> make_blob_dataset(std::size_t count, const BlobConfig& config, std::uint64_t seed,
                                                  const std::string& dataset_id = "synthetic");

// --- splitting ------------------------------------------------------------

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitManifest {
  std::uint64_t seed = 0;
  SplitRatios ratios;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  // Header lines "# seed", "# ratios", then [train]/[val]/[test] sections
  // with one item id per line.
  std::string to_text() const;
  static SplitManifest parse(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static SplitManifest load(const std::filesystem::path& path);
};

inline constexpr std::size_t kMinSplitSamples = 10;

// Sorts item ids, shuffles them with `seed`, then slices: val and test get
// round(n * ratio) items each and train the remainder.
SplitManifest split(const std::vector<SegmentationSample>& samples, std::uint64_t seed, SplitRatios ratios = {});

struct SplitSets {
  std::vector<SegmentationSample> train;
  std::vector<SegmentationSample> val;
  std::vector<SegmentationSample> test;
};

SplitSets apply_split(const std::vector<SegmentationSample>& samples, const SplitManifest& manifest);

// --- resizing -------------------------------------------------------------

// Bilinear (half-pixel centers) for the image, nearest for the mask. Returns
// an exact copy when the size already matches.
SegmentationSample resize(const SegmentationSample& s, Index height, Index width);
inline SegmentationSample resize(const SegmentationSample& s, Index size = 256) { return resize(s, size, size); }

// --- augmentation ---------------------------------------------------------

enum class AugmentKind {
  CenterCrop,
  RandomRotation,
  Transpose,
  ElasticTransform,
  GridDistortion,
  OpticalDistortion,
  VFlip,
  HFlip,
  Grayscale,
  RandomBrightness,
  RandomContrast,
  HueSaturation,
  RgbShift,
  CoarseDropout,
  Blur,
};

std::string to_string(AugmentKind kind);
AugmentKind parse_augment_kind(const std::string& name);  // ConfigError if unknown
bool is_geometric(AugmentKind kind);
const std::vector<AugmentKind>& all_augment_kinds();

// `magnitude` is kind-specific:
//   center_crop        smallest crop side as a fraction of the input (0.7)
//   random_rotation    max angle in degrees (90); multiples of 90 are exact
//   elastic_transform  displacement scale in pixels (alpha, 34); sigma = 4
//   grid_distortion    max relative cell distortion (0.3)
//   optical_distortion max radial coefficient (0.3)
//   random_brightness  max additive shift (0.2)
//   random_contrast    max relative contrast change (0.2)
//   hue_saturation     max hue shift in degrees (20); saturation +-magnitude%
//   rgb_shift          max per-channel shift in 8-bit units (20)
//   coarse_dropout     max hole side as a fraction of the input (0.1), up to 8 holes
//   blur               max box kernel size (7)
//   others             unused
struct AugmentOp {
  AugmentKind kind = AugmentKind::HFlip;
  double probability = 0.5;
  double magnitude = 0.0;  // 0 selects the default above
};

AugmentOp default_op(AugmentKind kind, double probability = 0.5);
std::vector<AugmentOp> default_augmentations(double probability = 0.5);

// Applies each op with its probability, drawing parameters from `seed`.
// Geometric ops move image and mask together; photometric ops touch only the
// image. Output size equals input size, except transpose of non-square input.
SegmentationSample augment(const SegmentationSample& s, const std::vector<AugmentOp>& ops, std::uint64_t seed);

// Exact quarter-turn rotation, counter-clockwise k times.
SegmentationSample rotate90(const SegmentationSample& s, int k);
SegmentationSample hflip(const SegmentationSample& s);
SegmentationSample vflip(const SegmentationSample& s);
SegmentationSample transpose(const SegmentationSample& s);

// --- pipeline wiring ------------------------------------------------------

struct DataConfig {
  Index image_size = 256;  // 0 keeps the input size
  std::uint64_t split_seed = 0;
  SplitRatios ratios;
  std::vector<AugmentOp> augmentations;  // empty disables augmentation
  int augment_copies = 0;                // extra augmented copies per training image
  std::uint64_t augment_seed = 0;
};

struct PreparedData {
  SplitManifest manifest;
  SplitSets sets;
};

// Resize, split, then augment the training split only. When `manifest` is
// given it is reused instead of drawing a new split.
PreparedData prepare_data(const std::vector<SegmentationSample>& samples, const DataConfig& config,
                          const SplitManifest* manifest = nullptr);

}  // namespace resunetpp
