#include <algorithm>

#include "gemm.hpp"
#include "resunetpp/ops.hpp"

namespace resunetpp {

ConvGeometry conv_geometry(Index in, Index kernel, int stride, int dilation, Padding padding) {
  if (kernel < 1 || stride < 1 || dilation < 1) {
    throw ShapeError("conv2d requires kernel, stride and dilation >= 1");
  }
  const Index extent = (kernel - 1) * dilation + 1;
  ConvGeometry g;
  if (padding == Padding::Same) {
    g.out = (in + stride - 1) / stride;
    const Index total = std::max<Index>((g.out - 1) * stride + extent - in, 0);
    g.pad_begin = total / 2;
  } else {
    if (in < extent) {
      throw ShapeError("conv2d 'valid' padding leaves an empty output (input " + std::to_string(in) +
                       ", kernel extent " + std::to_string(extent) + ")");
    }
    g.out = (in - extent) / stride + 1;
    g.pad_begin = 0;
  }
  return g;
}

namespace {

struct ConvPlan {
  Index batch, in_c, in_h, in_w;
  Index out_c, k_h, k_w;
  ConvGeometry gh, gw;
  int stride, dilation;

  Index patch() const { return in_c * k_h * k_w; }
  Index out_pixels() const { return gh.out * gw.out; }
  Index in_pixels() const { return in_h * in_w; }
  bool pointwise() const {
    return k_h == 1 && k_w == 1 && stride == 1 && gh.pad_begin == 0 && gw.pad_begin == 0;
  }
};

template <typename T>
ConvPlan make_plan(const Tensor<T>& input, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                   const Conv2dOptions& opts) {
  if (input.rank() != 4 || weight.rank() != 4) {
    throw ShapeError("conv2d expects 4-D input and weight, got " + shape_str(input.shape()) + " and " +
                     shape_str(weight.shape()));
  }
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(input.dim(1)) +
                     " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  if (bias && (bias->numel() != weight.dim(0))) {
    throw ShapeError("conv2d bias has " + std::to_string(bias->numel()) + " elements for " +
                     std::to_string(weight.dim(0)) + " output channels");
  }
  ConvPlan p{};
  p.batch = input.dim(0);
  p.in_c = input.dim(1);
  p.in_h = input.dim(2);
  p.in_w = input.dim(3);
  p.out_c = weight.dim(0);
  p.k_h = weight.dim(2);
  p.k_w = weight.dim(3);
  p.stride = opts.stride;
  p.dilation = opts.dilation;
  p.gh = conv_geometry(p.in_h, p.k_h, opts.stride, opts.dilation, opts.padding);
  p.gw = conv_geometry(p.in_w, p.k_w, opts.stride, opts.dilation, opts.padding);
  return p;
}

// col[(c*kh + i)*kw + j][oy*ow + ox]
template <typename T>
void im2col(const ConvPlan& p, const T* img, T* col) {
  const Index oh = p.gh.out, ow = p.gw.out;
  for (Index c = 0; c < p.in_c; ++c) {
    const T* plane = img + c * p.in_pixels();
    for (Index ki = 0; ki < p.k_h; ++ki) {
      for (Index kj = 0; kj < p.k_w; ++kj) {
        T* row = col + ((c * p.k_h + ki) * p.k_w + kj) * oh * ow;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index y = oy * p.stride - p.gh.pad_begin + ki * p.dilation;
          T* dst = row + oy * ow;
          if (y < 0 || y >= p.in_h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = plane + y * p.in_w;
          const Index x0 = kj * p.dilation - p.gw.pad_begin;
          if (p.stride == 1) {
            for (Index ox = 0; ox < ow; ++ox) {
              const Index x = ox + x0;
              dst[ox] = (x >= 0 && x < p.in_w) ? src[x] : T(0);
            }
          } else {
            for (Index ox = 0; ox < ow; ++ox) {
              const Index x = ox * p.stride + x0;
              dst[ox] = (x >= 0 && x < p.in_w) ? src[x] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvPlan& p, const T* col, T* img) {
  const Index oh = p.gh.out, ow = p.gw.out;
  for (Index c = 0; c < p.in_c; ++c) {
    T* plane = img + c * p.in_pixels();
    for (Index ki = 0; ki < p.k_h; ++ki) {
      for (Index kj = 0; kj < p.k_w; ++kj) {
        const T* row = col + ((c * p.k_h + ki) * p.k_w + kj) * oh * ow;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index y = oy * p.stride - p.gh.pad_begin + ki * p.dilation;
          if (y < 0 || y >= p.in_h) continue;
          T* dst = plane + y * p.in_w;
          const T* src = row + oy * ow;
          const Index x0 = kj * p.dilation - p.gw.pad_begin;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index x = ox * p.stride + x0;
            if (x >= 0 && x < p.in_w) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void lowered_forward(const ConvPlan& p, const T* x, const T* w, T* y) {
  const Index K = p.patch(), P = p.out_pixels();
  std::vector<T> col(p.pointwise() ? 0 : static_cast<std::size_t>(K * P));
  for (Index n = 0; n < p.batch; ++n) {
    const T* img = x + n * p.in_c * p.in_pixels();
    const T* b = img;
    if (!p.pointwise()) {
      im2col(p, img, col.data());
      b = col.data();
    }
    detail::gemm_nn<T>(p.out_c, P, K, w, K, b, P, y + n * p.out_c * P, P);
  }
}

template <typename T>
void lowered_backward(const ConvPlan& p, const T* x, const T* w, const T* gy, T* gx, T* gw) {
  const Index K = p.patch(), P = p.out_pixels();
  std::vector<T> col(static_cast<std::size_t>(K * P));
  std::vector<T> col_t(gw ? static_cast<std::size_t>(K * P) : 0);
  std::vector<T> w_t;
  std::vector<T> dcol;
  if (gx) {
    w_t.resize(static_cast<std::size_t>(K * p.out_c));
    detail::transpose(p.out_c, K, w, w_t.data());
    dcol.resize(static_cast<std::size_t>(K * P));
  }
  for (Index n = 0; n < p.batch; ++n) {
    const T* img = x + n * p.in_c * p.in_pixels();
    const T* g = gy + n * p.out_c * P;
    if (gw) {
      if (p.pointwise()) {
        detail::transpose(K, P, img, col_t.data());
      } else {
        im2col(p, img, col.data());
        detail::transpose(K, P, col.data(), col_t.data());
      }
      detail::gemm_nn<T>(p.out_c, K, P, g, P, col_t.data(), K, gw, K);
    }
    if (gx) {
      T* dimg = gx + n * p.in_c * p.in_pixels();
      if (p.pointwise()) {
        detail::gemm_nn<T>(K, P, p.out_c, w_t.data(), p.out_c, g, P, dimg, P);
      } else {
        std::fill(dcol.begin(), dcol.end(), T(0));
        detail::gemm_nn<T>(K, P, p.out_c, w_t.data(), p.out_c, g, P, dcol.data(), P);
        col2im(p, dcol.data(), dimg);
      }
    }
  }
}

template <typename T>
void direct_forward(const ConvPlan& p, const T* x, const T* w, T* y) {
  const Index oh = p.gh.out, ow = p.gw.out;
  for (Index n = 0; n < p.batch; ++n)
    for (Index o = 0; o < p.out_c; ++o)
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
          T acc = 0;
          for (Index c = 0; c < p.in_c; ++c)
            for (Index ki = 0; ki < p.k_h; ++ki)
              for (Index kj = 0; kj < p.k_w; ++kj) {
                const Index iy = oy * p.stride - p.gh.pad_begin + ki * p.dilation;
                const Index ix = ox * p.stride - p.gw.pad_begin + kj * p.dilation;
                if (iy < 0 || iy >= p.in_h || ix < 0 || ix >= p.in_w) continue;
                acc += x[((n * p.in_c + c) * p.in_h + iy) * p.in_w + ix] *
                       w[((o * p.in_c + c) * p.k_h + ki) * p.k_w + kj];
              }
          y[((n * p.out_c + o) * oh + oy) * ow + ox] += acc;
        }
}

template <typename T>
void direct_backward(const ConvPlan& p, const T* x, const T* w, const T* gy, T* gx, T* gw) {
  const Index oh = p.gh.out, ow = p.gw.out;
  for (Index n = 0; n < p.batch; ++n)
    for (Index o = 0; o < p.out_c; ++o)
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
          const T g = gy[((n * p.out_c + o) * oh + oy) * ow + ox];
          for (Index c = 0; c < p.in_c; ++c)
            for (Index ki = 0; ki < p.k_h; ++ki)
              for (Index kj = 0; kj < p.k_w; ++kj) {
                const Index iy = oy * p.stride - p.gh.pad_begin + ki * p.dilation;
                const Index ix = ox * p.stride - p.gw.pad_begin + kj * p.dilation;
                if (iy < 0 || iy >= p.in_h || ix < 0 || ix >= p.in_w) continue;
                const Index xi = ((n * p.in_c + c) * p.in_h + iy) * p.in_w + ix;
                const Index wi = ((o * p.in_c + c) * p.k_h + ki) * p.k_w + kj;
                if (gx) gx[xi] += g * w[wi];
                if (gw) gw[wi] += g * x[xi];
              }
        }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 const Conv2dOptions& opts) {
  const ConvPlan p = make_plan(input, weight, bias, opts);
  Tensor<T> out(Shape{p.batch, p.out_c, p.gh.out, p.gw.out});
  T* y = out.data().data();
  const Index P = p.out_pixels();
  if (bias) {
    const auto b = bias->data();
    for (Index n = 0; n < p.batch; ++n)
      for (Index o = 0; o < p.out_c; ++o) std::fill_n(y + (n * p.out_c + o) * P, P, b[o]);
  }
  if (opts.algorithm == ConvAlgorithm::Lowered) {
    lowered_forward(p, input.data().data(), weight.data().data(), y);
  } else {
    direct_forward(p, input.data().data(), weight.data().data(), y);
  }

  const Tensor<T>* bias_ptr = bias ? &*bias : nullptr;
  if (detail::should_record<T>({&input, &weight, bias_ptr})) {
    auto xn = input.node_ptr();
    auto wn = weight.node_ptr();
    auto bn = bias ? bias->node_ptr() : nullptr;
    auto on = out.node_ptr();
    const auto algo = opts.algorithm;
    detail::record_op<T>({&input, &weight, bias_ptr}, out, [p, xn, wn, bn, on, algo] {
      const T* gy = on->grad.data();
      T* gx = xn->requires_grad ? detail::grad_buffer(*xn).data() : nullptr;
      T* gw = wn->requires_grad ? detail::grad_buffer(*wn).data() : nullptr;
      if (bn && bn->requires_grad) {
        auto& gb = detail::grad_buffer(*bn);
        const Index P = p.out_pixels();
        for (Index n = 0; n < p.batch; ++n)
          for (Index o = 0; o < p.out_c; ++o) {
            const T* g = gy + (n * p.out_c + o) * P;
            T acc = 0;
            for (Index i = 0; i < P; ++i) acc += g[i];
            gb[static_cast<std::size_t>(o)] += acc;
          }
      }
      if (!gx && !gw) return;
      if (algo == ConvAlgorithm::Lowered) {
        lowered_backward(p, xn->data.data(), wn->data.data(), gy, gx, gw);
      } else {
        direct_backward(p, xn->data.data(), wn->data.data(), gy, gx, gw);
      }
    });
  }
  return out;
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, const std::optional<Tensor<float>>&,
                              const Conv2dOptions&);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&, const std::optional<Tensor<double>>&,
                               const Conv2dOptions&);

}  // namespace resunetpp
