#pragma once

#include <functional>
#include <optional>

#include "resunetpp/tensor.hpp"

namespace resunetpp {

enum class Padding { Same, Valid };

// Lowered runs im2col + matrix multiply; Direct runs the nested-loop
// reference. Both are differentiable and must agree to rounding.
enum class ConvAlgorithm { Lowered, Direct };

struct Conv2dOptions {
  int stride = 1;
  int dilation = 1;
  Padding padding = Padding::Same;
  ConvAlgorithm algorithm = ConvAlgorithm::Lowered;
};

// Output size and leading pad along one spatial axis. Under "same" any odd
// total padding puts the extra pixel at the bottom/right.
struct ConvGeometry {
  Index out = 0;
  Index pad_begin = 0;
};
ConvGeometry conv_geometry(Index in, Index kernel, int stride, int dilation, Padding padding);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 const Conv2dOptions& opts = {});

// Per-channel running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormStats {
  std::vector<T> mean;
  std::vector<T> var;
  std::int64_t batches_tracked = 0;

  explicit BatchNormStats(Index channels = 0)
      : mean(static_cast<std::size_t>(channels), T(0)), var(static_cast<std::size_t>(channels), T(1)) {}
  bool initialized() const { return batches_tracked > 0; }
};

struct BatchNormOptions {
  double momentum = 0.99;
  double epsilon = 1e-5;
};

// Train mode normalizes with biased batch statistics and folds them into
// `stats` (the first update copies them). Eval mode uses `stats` and throws
// StateError if none were ever recorded.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, Mode mode, const BatchNormOptions& opts = {});

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, int factor);
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, int factor);

// Concatenation along the channel axis.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise with broadcasting: ranks must match and each axis must be equal
// or 1 on one side.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

inline constexpr double kBceClamp = 1e-7;

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target, T smooth = T(1));

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for scalar-valued f. `x` is perturbed in place and restored.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double>& x,
                  double h = 1e-5);

template <typename T>
void require_finite(const Tensor<T>& x, const char* what);

}  // namespace resunetpp
