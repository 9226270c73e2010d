#include "resunetpp/ops.hpp"

#include <array>
#include <cmath>

namespace resunetpp {

namespace {

template <typename T>
void require_rank4(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + " expects a 4-D tensor, got " + shape_str(x.shape()));
}

template <typename T>
void accumulate(std::vector<T>& dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// batch norm

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, Mode mode, const BatchNormOptions& opts) {
  require_rank4(input, "batch_norm");
  const Index N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  if (N < 1) throw ShapeError("batch_norm on an empty batch");
  if (gamma.numel() != C || beta.numel() != C) {
    throw ShapeError("batch_norm parameters sized for " + std::to_string(gamma.numel()) + " channels, input has " +
                     std::to_string(C));
  }
  if (static_cast<Index>(stats.mean.size()) != C) {
    throw ShapeError("batch_norm running statistics sized for " + std::to_string(stats.mean.size()) +
                     " channels, input has " + std::to_string(C));
  }
  if (!(opts.epsilon > 0)) throw ConfigError("batch_norm epsilon must be positive");
  if (mode == Mode::Eval && !stats.initialized()) {
    throw StateError("batch_norm in eval mode before any running statistics were recorded");
  }

  const Index m = N * HW;
  std::vector<T> mu(static_cast<std::size_t>(C)), inv_std(static_cast<std::size_t>(C));
  const auto x = input.data();
  for (Index c = 0; c < C; ++c) {
    if (mode == Mode::Train) {
      double s = 0;
      for (Index n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * HW;
        for (Index i = 0; i < HW; ++i) s += p[i];
      }
      const double mean_c = s / static_cast<double>(m);
      double ss = 0;
      for (Index n = 0; n < N; ++n) {
        const T* p = x.data() + (n * C + c) * HW;
        for (Index i = 0; i < HW; ++i) {
          const double d = p[i] - mean_c;
          ss += d * d;
        }
      }
      const double var_c = ss / static_cast<double>(m);
      mu[c] = static_cast<T>(mean_c);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var_c + opts.epsilon));
      if (stats.initialized()) {
        stats.mean[c] = static_cast<T>(opts.momentum * stats.mean[c] + (1 - opts.momentum) * mean_c);
        stats.var[c] = static_cast<T>(opts.momentum * stats.var[c] + (1 - opts.momentum) * var_c);
      } else {
        stats.mean[c] = static_cast<T>(mean_c);
        stats.var[c] = static_cast<T>(var_c);
      }
    } else {
      mu[c] = stats.mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[c]) + opts.epsilon));
    }
  }
  if (mode == Mode::Train) ++stats.batches_tracked;

  Tensor<T> out(input.shape());
  Tensor<T> xhat(input.shape());
  auto y = out.data();
  auto xh = xhat.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c) {
      const Index off = (n * C + c) * HW;
      for (Index i = 0; i < HW; ++i) {
        const T v = (x[off + i] - mu[c]) * inv_std[c];
        xh[off + i] = v;
        y[off + i] = g[c] * v + b[c];
      }
    }

  if (detail::should_record<T>({&input, &gamma, &beta})) {
    auto xn = input.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr(), on = out.node_ptr();
    auto xhn = xhat.node_ptr();
    detail::record_op<T>({&input, &gamma, &beta}, out, [=] {
      const auto& gy = on->grad;
      const auto& xh = xhn->data;
      const auto& gam = gn->data;
      std::vector<double> sum_g(static_cast<std::size_t>(C), 0.0), sum_gx(static_cast<std::size_t>(C), 0.0);
      for (Index n = 0; n < N; ++n)
        for (Index c = 0; c < C; ++c) {
          const Index off = (n * C + c) * HW;
          double s = 0, sx = 0;
          for (Index i = 0; i < HW; ++i) {
            s += gy[off + i];
            sx += gy[off + i] * xh[off + i];
          }
          sum_g[c] += s;
          sum_gx[c] += sx;
        }
      if (gn->requires_grad) {
        auto& gg = detail::grad_buffer(*gn);
        for (Index c = 0; c < C; ++c) gg[c] += static_cast<T>(sum_gx[c]);
      }
      if (bn->requires_grad) {
        auto& gb = detail::grad_buffer(*bn);
        for (Index c = 0; c < C; ++c) gb[c] += static_cast<T>(sum_g[c]);
      }
      if (!xn->requires_grad) return;
      auto& gx = detail::grad_buffer(*xn);
      for (Index c = 0; c < C; ++c) {
        const T k = gam[c] * inv_std[c];
        const T mean_g = mode == Mode::Train ? static_cast<T>(sum_g[c] / m) : T(0);
        const T mean_gx = mode == Mode::Train ? static_cast<T>(sum_gx[c] / m) : T(0);
        for (Index n = 0; n < N; ++n) {
          const Index off = (n * C + c) * HW;
          for (Index i = 0; i < HW; ++i) gx[off + i] += k * (gy[off + i] - mean_g - xh[off + i] * mean_gx);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto y = out.data();
  const auto v = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = v[i] > T(0) ? v[i] : T(0);
  if (detail::should_record<T>({&x})) {
    auto xn = x.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&x}, out, [xn, on] {
      auto& gx = detail::grad_buffer(*xn);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (xn->data[i] > T(0)) gx[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto y = out.data();
  const auto v = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (v[i] >= T(0)) {
      y[i] = T(1) / (T(1) + std::exp(-v[i]));
    } else {
      const T e = std::exp(v[i]);
      y[i] = e / (T(1) + e);
    }
  }
  if (detail::should_record<T>({&x})) {
    auto xn = x.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&x}, out, [xn, on] {
      auto& gx = detail::grad_buffer(*xn);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const T s = on->data[i];
        gx[i] += on->grad[i] * s * (T(1) - s);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pooling / resampling

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank4(x, "global_avg_pool");
  const Index N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{N, C, 1, 1});
  const auto v = x.data();
  auto y = out.data();
  for (Index nc = 0; nc < N * C; ++nc) {
    T s = 0;
    for (Index i = 0; i < HW; ++i) s += v[nc * HW + i];
    y[nc] = s / static_cast<T>(HW);
  }
  if (detail::should_record<T>({&x})) {
    auto xn = x.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&x}, out, [xn, on, N, C, HW] {
      auto& gx = detail::grad_buffer(*xn);
      for (Index nc = 0; nc < N * C; ++nc) {
        const T g = on->grad[nc] / static_cast<T>(HW);
        for (Index i = 0; i < HW; ++i) gx[nc * HW + i] += g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, int factor) {
  require_rank4(x, "nearest_upsample");
  if (factor < 1) throw ShapeError("nearest_upsample factor must be >= 1");
  const Index NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index OH = H * factor, OW = W * factor;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), OH, OW});
  const auto v = x.data();
  auto y = out.data();
  for (Index p = 0; p < NC; ++p)
    for (Index oy = 0; oy < OH; ++oy) {
      const T* src = v.data() + (p * H + oy / factor) * W;
      T* dst = y.data() + (p * OH + oy) * OW;
      for (Index ox = 0; ox < OW; ++ox) dst[ox] = src[ox / factor];
    }
  if (detail::should_record<T>({&x})) {
    auto xn = x.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&x}, out, [xn, on, NC, H, W, OH, OW, factor] {
      auto& gx = detail::grad_buffer(*xn);
      for (Index p = 0; p < NC; ++p)
        for (Index oy = 0; oy < OH; ++oy) {
          T* dst = gx.data() + (p * H + oy / factor) * W;
          const T* src = on->grad.data() + (p * OH + oy) * OW;
          for (Index ox = 0; ox < OW; ++ox) dst[ox / factor] += src[ox];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, int factor) {
  require_rank4(x, "avg_pool");
  if (factor < 1) throw ShapeError("avg_pool factor must be >= 1");
  const Index NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % factor != 0 || W % factor != 0) {
    throw ShapeError("avg_pool factor " + std::to_string(factor) + " does not divide " + shape_str(x.shape()));
  }
  const Index OH = H / factor, OW = W / factor;
  const T inv = T(1) / static_cast<T>(factor * factor);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), OH, OW});
  const auto v = x.data();
  auto y = out.data();
  for (Index p = 0; p < NC; ++p)
    for (Index iy = 0; iy < H; ++iy)
      for (Index ix = 0; ix < W; ++ix) y[(p * OH + iy / factor) * OW + ix / factor] += v[(p * H + iy) * W + ix];
  for (auto& e : y) e *= inv;
  if (detail::should_record<T>({&x})) {
    auto xn = x.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&x}, out, [xn, on, NC, H, W, OH, OW, factor, inv] {
      auto& gx = detail::grad_buffer(*xn);
      for (Index p = 0; p < NC; ++p)
        for (Index iy = 0; iy < H; ++iy)
          for (Index ix = 0; ix < W; ++ix)
            gx[(p * H + iy) * W + ix] += inv * on->grad[(p * OH + iy / factor) * OW + ix / factor];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// structural / elementwise

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a, "concat");
  require_rank4(b, "concat");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat of incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const Index N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor<T> out(Shape{N, Ca + Cb, a.dim(2), a.dim(3)});
  auto y = out.data();
  const auto va = a.data();
  const auto vb = b.data();
  for (Index n = 0; n < N; ++n) {
    std::copy_n(va.data() + n * Ca * HW, Ca * HW, y.data() + n * (Ca + Cb) * HW);
    std::copy_n(vb.data() + n * Cb * HW, Cb * HW, y.data() + (n * (Ca + Cb) + Ca) * HW);
  }
  if (detail::should_record<T>({&a, &b})) {
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&a, &b}, out, [an, bn, on, N, Ca, Cb, HW] {
      const T* g = on->grad.data();
      if (an->requires_grad) {
        auto& ga = detail::grad_buffer(*an);
        for (Index n = 0; n < N; ++n)
          for (Index i = 0; i < Ca * HW; ++i) ga[n * Ca * HW + i] += g[n * (Ca + Cb) * HW + i];
      }
      if (bn->requires_grad) {
        auto& gb = detail::grad_buffer(*bn);
        for (Index n = 0; n < N; ++n)
          for (Index i = 0; i < Cb * HW; ++i) gb[n * Cb * HW + i] += g[(n * (Ca + Cb) + Ca) * HW + i];
      }
    });
  }
  return out;
}

namespace {

// Strided view of a broadcast operand inside the common 4-D output index space.
struct BroadcastPlan {
  std::array<Index, 4> dims{1, 1, 1, 1};
  std::array<Index, 4> a_stride{0, 0, 0, 0};
  std::array<Index, 4> b_stride{0, 0, 0, 0};
  Shape out_shape;
  bool same = false;

  template <typename F>
  void for_each(F&& f) const {
    Index o = 0;
    for (Index i0 = 0; i0 < dims[0]; ++i0)
      for (Index i1 = 0; i1 < dims[1]; ++i1)
        for (Index i2 = 0; i2 < dims[2]; ++i2) {
          const Index ab = i0 * a_stride[0] + i1 * a_stride[1] + i2 * a_stride[2];
          const Index bb = i0 * b_stride[0] + i1 * b_stride[1] + i2 * b_stride[2];
          for (Index i3 = 0; i3 < dims[3]; ++i3, ++o) f(o, ab + i3 * a_stride[3], bb + i3 * b_stride[3]);
        }
  }
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  auto fail = [&] {
    throw ShapeError(std::string(op) + " of incompatible shapes " + shape_str(a) + " and " + shape_str(b));
  };
  if (a.size() != b.size() || a.size() > 4 || a.empty()) fail();
  BroadcastPlan p;
  p.same = a == b;
  const std::size_t pad = 4 - a.size();
  std::array<Index, 4> da{1, 1, 1, 1}, db{1, 1, 1, 1};
  for (std::size_t i = 0; i < a.size(); ++i) {
    da[pad + i] = a[i];
    db[pad + i] = b[i];
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) fail();
    p.dims[i] = std::max(da[i], db[i]);
  }
  Index sa = 1, sb = 1;
  for (int i = 3; i >= 0; --i) {
    p.a_stride[i] = da[i] == 1 ? 0 : sa;
    p.b_stride[i] = db[i] == 1 ? 0 : sb;
    sa *= da[i];
    sb *= db[i];
  }
  for (std::size_t i = pad; i < 4; ++i) p.out_shape.push_back(p.dims[i]);
  return p;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const BroadcastPlan p = plan_broadcast(a.shape(), b.shape(), "add");
  Tensor<T> out(p.out_shape);
  auto y = out.data();
  const auto va = a.data();
  const auto vb = b.data();
  if (p.same) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = va[i] + vb[i];
  } else {
    p.for_each([&](Index o, Index ia, Index ib) { y[o] = va[ia] + vb[ib]; });
  }
  if (detail::should_record<T>({&a, &b})) {
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&a, &b}, out, [p, an, bn, on] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = detail::grad_buffer(*an);
        if (p.same) accumulate<T>(ga, g);
        else p.for_each([&](Index o, Index ia, Index) { ga[ia] += g[o]; });
      }
      if (bn->requires_grad) {
        auto& gb = detail::grad_buffer(*bn);
        if (p.same) accumulate<T>(gb, g);
        else p.for_each([&](Index o, Index, Index ib) { gb[ib] += g[o]; });
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const BroadcastPlan p = plan_broadcast(a.shape(), b.shape(), "mul");
  Tensor<T> out(p.out_shape);
  auto y = out.data();
  const auto va = a.data();
  const auto vb = b.data();
  if (p.same) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = va[i] * vb[i];
  } else {
    p.for_each([&](Index o, Index ia, Index ib) { y[o] = va[ia] * vb[ib]; });
  }
  if (detail::should_record<T>({&a, &b})) {
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&a, &b}, out, [p, an, bn, on] {
      const auto& g = on->grad;
      const auto& da = an->data;
      const auto& db = bn->data;
      if (an->requires_grad) {
        auto& ga = detail::grad_buffer(*an);
        p.for_each([&](Index o, Index ia, Index ib) { ga[ia] += g[o] * db[ib]; });
      }
      if (bn->requires_grad) {
        auto& gb = detail::grad_buffer(*bn);
        p.for_each([&](Index o, Index ia, Index ib) { gb[ib] += g[o] * da[ia]; });
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  auto y = out.data();
  const auto v = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = v[i] * factor;
  if (detail::should_record<T>({&x})) {
    auto xn = x.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&x}, out, [xn, on, factor] {
      auto& gx = detail::grad_buffer(*xn);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double s = 0;
  for (T v : x.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
  if (detail::should_record<T>({&x})) {
    auto xn = x.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&x}, out, [xn, on] {
      auto& gx = detail::grad_buffer(*xn);
      const T g = on->grad[0];
      for (auto& e : gx) e += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// losses

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("bce_loss shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const auto p = pred.data();
  const auto t = target.data();
  const double lo = kBceClamp, hi = 1.0 - kBceClamp;
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp<double>(p[i], lo, hi);
    acc += t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q);
  }
  const double n = static_cast<double>(p.size());
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(-acc / n));
  if (detail::should_record<T>({&pred})) {
    auto pn = pred.node_ptr(), tn = target.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&pred}, out, [pn, tn, on, n, lo, hi] {
      auto& gp = detail::grad_buffer(*pn);
      const double g = on->grad[0];
      for (std::size_t i = 0; i < gp.size(); ++i) {
        const double q = pn->data[i];
        if (q < lo || q > hi) continue;
        const double ti = tn->data[i];
        gp[i] += static_cast<T>(-g * (ti / q - (1.0 - ti) / (1.0 - q)) / n);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target, T smooth) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("dice_loss shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const auto p = pred.data();
  const auto t = target.data();
  double inter = 0, total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += static_cast<double>(p[i]) * t[i];
    total += static_cast<double>(p[i]) + t[i];
  }
  const double s = smooth;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(1.0 - (2.0 * inter + s) / (total + s)));
  if (detail::should_record<T>({&pred})) {
    auto pn = pred.node_ptr(), tn = target.node_ptr(), on = out.node_ptr();
    detail::record_op<T>({&pred}, out, [pn, tn, on, inter, total, s] {
      auto& gp = detail::grad_buffer(*pn);
      const double g = on->grad[0];
      const double den = total + s;
      const double num = 2.0 * inter + s;
      for (std::size_t i = 0; i < gp.size(); ++i) {
        gp[i] += static_cast<T>(-g * (2.0 * tn->data[i] * den - num) / (den * den));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double>& x, double h) {
  const bool had_flag = x.requires_grad();
  x.set_requires_grad(true);
  std::fill(x.grad().begin(), x.grad().end(), 0.0);

  Tape<double> tape;
  Tensor<double> y;
  {
    TapeScope<double> scope(tape);
    y = f(x);
  }
  if (y.numel() != 1) throw ShapeError("grad_check requires a scalar-valued function");
  tape.backward(y);
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  NoGradScope<double> no_grad;
  double worst = 0;
  auto v = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + h;
    const double fp = f(x).item();
    v[i] = orig - h;
    const double fm = f(x).item();
    v[i] = orig;
    const double numeric = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  x.set_requires_grad(had_flag);
  return worst;
}

template <typename T>
void require_finite(const Tensor<T>& x, const char* what) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

#define RESUNETPP_INSTANTIATE(T)                                                                             \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormStats<T>&, Mode, \
                                const BatchNormOptions&);                                                    \
  template Tensor<T> relu(const Tensor<T>&);                                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                              \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                      \
  template Tensor<T> nearest_upsample(const Tensor<T>&, int);                                                \
  template Tensor<T> avg_pool(const Tensor<T>&, int);                                                        \
  template Tensor<T> concat(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                                 \
  template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> dice_loss(const Tensor<T>&, const Tensor<T>&, T);                                       \
  template void require_finite(const Tensor<T>&, const char*);

RESUNETPP_INSTANTIATE(float)
RESUNETPP_INSTANTIATE(double)

#undef RESUNETPP_INSTANTIATE

}  // namespace resunetpp
