#include "resunetpp/tta.hpp"

#include <algorithm>

namespace resunetpp {

std::string to_string(TtaVariant v) {
  switch (v) {
    case TtaVariant::Identity: return "identity";
    case TtaVariant::HFlip: return "hflip";
    case TtaVariant::VFlip: return "vflip";
    case TtaVariant::HVFlip: return "hvflip";
  }
  return "unknown";
}

TtaVariant parse_tta_variant(const std::string& name) {
  for (auto v : {TtaVariant::Identity, TtaVariant::HFlip, TtaVariant::VFlip, TtaVariant::HVFlip}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("tta: unknown variant '" + name + "'");
}

void TtaConfig::validate() const {
  if (std::find(variants.begin(), variants.end(), TtaVariant::Identity) == variants.end()) {
    throw ConfigError("tta.variants must include identity");
  }
  for (std::size_t i = 0; i < variants.size(); ++i) {
    for (std::size_t j = i + 1; j < variants.size(); ++j) {
      if (variants[i] == variants[j]) throw ConfigError("tta.variants lists " + to_string(variants[i]) + " twice");
    }
  }
}

std::string TtaConfig::describe() const {
  std::string s;
  for (auto v : variants) s += (s.empty() ? "" : "+") + to_string(v);
  return s;
}

namespace {

template <typename T>
Tensor<T> flip(const Tensor<T>& x, bool horizontal) {
  if (x.rank() != 4) throw ShapeError("flip expects a 4-D tensor, got " + shape_str(x.shape()));
  const Index planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < H; ++y)
      for (Index c = 0; c < W; ++c) {
        const Index from = horizontal ? (p * H + y) * W + (W - 1 - c) : (p * H + (H - 1 - y)) * W + c;
        dst[(p * H + y) * W + c] = src[from];
      }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> hflip(const Tensor<T>& x) {
  return flip(x, true);
}

template <typename T>
Tensor<T> vflip(const Tensor<T>& x) {
  return flip(x, false);
}

template <typename T>
Tensor<T> apply_variant(TtaVariant v, const Tensor<T>& x) {
  switch (v) {
    case TtaVariant::Identity: return x;
    case TtaVariant::HFlip: return hflip(x);
    case TtaVariant::VFlip: return vflip(x);
    case TtaVariant::HVFlip: return vflip(hflip(x));
  }
  return x;
}

template <typename T>
Tensor<T> tta_predict(const Predictor<T>& f, const Tensor<T>& x, const TtaConfig& config) {
  config.validate();
  Tensor<T> acc;
  for (auto v : config.variants) {
    Tensor<T> y = apply_variant(v, f(apply_variant(v, x)));
    if (!acc.defined()) {
      acc = y.clone();
      continue;
    }
    if (y.shape() != acc.shape()) throw ShapeError("tta: predictions of different variants differ in shape");
    auto a = acc.data();
    auto b = y.data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
  if (config.variants.size() > 1) {
    const T n = static_cast<T>(config.variants.size());
    for (auto& v : acc.data()) v /= n;
  }
  return acc;
}

template <typename T>
Tensor<T> tta_predict(ResUNetPP<T>& model, const Tensor<T>& x, const TtaConfig& config, Mode mode) {
  NoGradScope<T> no_grad;
  return tta_predict<T>([&](const Tensor<T>& v) { return model.forward(v, mode); }, x, config);
}

#define RESUNETPP_INSTANTIATE(T)                                                                   \
  template Tensor<T> hflip(const Tensor<T>&);                                                      \
  template Tensor<T> vflip(const Tensor<T>&);                                                      \
  template Tensor<T> apply_variant(TtaVariant, const Tensor<T>&);                                  \
  template Tensor<T> tta_predict(const Predictor<T>&, const Tensor<T>&, const TtaConfig&);         \
  template Tensor<T> tta_predict(ResUNetPP<T>&, const Tensor<T>&, const TtaConfig&, Mode);

RESUNETPP_INSTANTIATE(float)
RESUNETPP_INSTANTIATE(double)

}  // namespace resunetpp
