#pragma once

// Fully connected two-label CRF with Gaussian smoothness and bilateral
// appearance kernels, refined by synchronous mean-field updates.

#include <cstdint>
#include <functional>
#include <vector>

#include "resunetpp/data.hpp"
#include "resunetpp/tensor.hpp"

namespace resunetpp {

enum class Compatibility { Potts };

struct CrfParams {
  int iterations = 5;
  double w_smooth = 3.0;
  double w_bilateral = 10.0;
  double theta_gamma = 3.0;   // px, smoothness kernel
  double theta_alpha = 60.0;  // px, bilateral kernel
  double theta_beta = 20.0;   // 8-bit color units, bilateral kernel
  Compatibility compat = Compatibility::Potts;
  // Images with more pixels than this need `truncate`.
  Index max_exact_pixels = 96 * 96;
  // Only pair pixels within a square window of radius 4 * max(theta_gamma,
  // theta_alpha) (or `window_radius` when positive).
  bool truncate = false;
  Index window_radius = 0;

  void validate() const;  // ConfigError naming the field
};

// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> rgb;

  static RgbImage from_sample(const SegmentationSample& s);  // round(v * 255)
};

struct UnaryField {
  Index height = 0;
  Index width = 0;
  std::vector<double> background;  // -log(1 - p)
  std::vector<double> polyp;       // -log p
};

inline constexpr double kCrfProbClamp = 1e-7;

template <typename T>
UnaryField unary_from_prob(const Tensor<T>& prob);  // prob [1, 1, H, W]

// Called after every iteration with Q(background) and Q(polyp).
using CrfObserver = std::function<void(int iteration, const std::vector<double>& q_bg, const std::vector<double>& q_fg)>;

// Returns Q(polyp) as [1, 1, H, W]. Q starts at the clamped input
// probabilities (the softmax of the unaries). With both kernel weights zero or
// zero iterations the clamped input is returned unchanged.
template <typename T>
Tensor<T> meanfield_refine(const RgbImage& image, const Tensor<T>& prob, const CrfParams& params,
                           const CrfObserver& observer = {});

// meanfield_refine, then p >= threshold -> 1.
template <typename T>
std::vector<std::uint8_t> refine_mask(const RgbImage& image, const Tensor<T>& prob, const CrfParams& params,
                                      double threshold = 0.5);

}  // namespace resunetpp
