#pragma once

#include <random>

#include "resunetpp/tensor.hpp"

namespace resunetpp::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  t.set_requires_grad(requires_grad);
  return t;
}

// Naive direct convolution, six nested loops over (o, y, x, c, ki, kj) per
// image, with explicit zero padding. Independent of the library's paths.
inline std::vector<double> naive_conv(const std::vector<double>& x, Shape xs, const std::vector<double>& w, Shape ws,
                                      int stride, int dilation, bool same, Index& oh, Index& ow) {
  const Index N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const Index O = ws[0], KH = ws[2], KW = ws[3];
  const Index eh = (KH - 1) * dilation + 1, ew = (KW - 1) * dilation + 1;
  Index pt = 0, pl = 0;
  if (same) {
    oh = (H + stride - 1) / stride;
    ow = (W + stride - 1) / stride;
    pt = std::max<Index>((oh - 1) * stride + eh - H, 0) / 2;
    pl = std::max<Index>((ow - 1) * stride + ew - W, 0) / 2;
  } else {
    oh = (H - eh) / stride + 1;
    ow = (W - ew) / stride + 1;
  }
  std::vector<double> y(static_cast<std::size_t>(N * O * oh * ow), 0.0);
  for (Index n = 0; n < N; ++n)
    for (Index o = 0; o < O; ++o)
      for (Index r = 0; r < oh; ++r)
        for (Index s = 0; s < ow; ++s) {
          double acc = 0;
          for (Index c = 0; c < C; ++c)
            for (Index i = 0; i < KH; ++i)
              for (Index j = 0; j < KW; ++j) {
                const Index yy = r * stride + i * dilation - pt;
                const Index xx = s * stride + j * dilation - pl;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                acc += x[((n * C + c) * H + yy) * W + xx] * w[((o * C + c) * KH + i) * KW + j];
              }
          y[((n * O + o) * oh + r) * ow + s] = acc;
        }
  return y;
}

}  // namespace resunetpp::testing
