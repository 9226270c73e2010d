#pragma once

// Flip-based test-time augmentation: predict on flipped copies, flip the
// predictions back and average.

#include <functional>
#include <string>
#include <vector>

#include "resunetpp/model.hpp"

namespace resunetpp {

enum class TtaVariant { Identity, HFlip, VFlip, HVFlip };

std::string to_string(TtaVariant v);
TtaVariant parse_tta_variant(const std::string& name);

struct TtaConfig {
  std::vector<TtaVariant> variants{TtaVariant::Identity, TtaVariant::HFlip, TtaVariant::VFlip, TtaVariant::HVFlip};

  // Identity must be present and variants unique.
  void validate() const;
  std::string describe() const;  // e.g. "identity+hflip+vflip+hvflip"
};

// Reverse the width / height axis of a 4-D tensor.
template <typename T>
Tensor<T> hflip(const Tensor<T>& x);
template <typename T>
Tensor<T> vflip(const Tensor<T>& x);

// Every variant is its own inverse.
template <typename T>
Tensor<T> apply_variant(TtaVariant v, const Tensor<T>& x);

template <typename T>
using Predictor = std::function<Tensor<T>(const Tensor<T>&)>;

// mean over variants of v^-1(f(v(x))), accumulated in variant order.
template <typename T>
Tensor<T> tta_predict(const Predictor<T>& f, const Tensor<T>& x, const TtaConfig& config);

template <typename T>
Tensor<T> tta_predict(ResUNetPP<T>& model, const Tensor<T>& x, const TtaConfig& config, Mode mode = Mode::Eval);

}  // namespace resunetpp
