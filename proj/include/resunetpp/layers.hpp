#pragma once

// Parameter-owning wrappers around the tensor primitives, plus the
// bookkeeping used for counting, initializing and serializing parameters.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "resunetpp/ops.hpp"

namespace resunetpp {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct NamedStats {
  std::string name;
  BatchNormStats<T>* stats;
};

// Flat view over a model's parameters. Tensors alias the owning layers.
template <typename T>
struct ParameterSet {
  std::vector<NamedTensor<T>> trainable;
  std::vector<NamedStats<T>> running;

  Index count() const {
    Index n = 0;
    for (const auto& p : trainable) n += p.tensor.numel();
    return n;
  }
};

// Deterministic initializer; the same seed yields identical parameter bytes.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  // Uniform in [-limit, limit) with limit = sqrt(6 / fan_in).
  template <typename T>
  void he_uniform(Tensor<T>& w, Index fan_in);

 private:
  std::mt19937_64 rng_;
};

template <typename T>
struct ConvLayer {
  Tensor<T> weight;
  std::optional<Tensor<T>> bias;
  Conv2dOptions options;

  ConvLayer() = default;
  ConvLayer(Index in_c, Index out_c, Index kernel, Initializer& init, Conv2dOptions opts = {}, bool with_bias = true);

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, options); }
  void collect(const std::string& prefix, ParameterSet<T>& out);
};

template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;
  BatchNormOptions options;

  BatchNormLayer() = default;
  explicit BatchNormLayer(Index channels);

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) { return batch_norm(x, gamma, beta, stats, mode, options); }
  void collect(const std::string& prefix, ParameterSet<T>& out);
};

template <typename T>
Index count_parameters(const ParameterSet<T>& params) {
  return params.count();
}

// Overwrites every trainable tensor in the set with `value`.
template <typename T>
void fill_parameters(ParameterSet<T>& params, T value) {
  for (auto& p : params.trainable) std::fill(p.tensor.data().begin(), p.tensor.data().end(), value);
}

}  // namespace resunetpp
