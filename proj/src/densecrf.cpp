#include "resunetpp/densecrf.hpp"

#include <algorithm>
#include <cmath>

namespace resunetpp {

void CrfParams::validate() const {
  if (iterations < 0) throw ConfigError("crf.iterations must be >= 0");
  if (w_smooth < 0) throw ConfigError("crf.w_smooth must be >= 0");
  if (w_bilateral < 0) throw ConfigError("crf.w_bilateral must be >= 0");
  if (!(theta_gamma > 0)) throw ConfigError("crf.theta_gamma must be > 0");
  if (!(theta_alpha > 0)) throw ConfigError("crf.theta_alpha must be > 0");
  if (!(theta_beta > 0)) throw ConfigError("crf.theta_beta must be > 0");
  if (max_exact_pixels < 1) throw ConfigError("crf.max_exact_pixels must be >= 1");
  if (window_radius < 0) throw ConfigError("crf.window_radius must be >= 0");
}

RgbImage RgbImage::from_sample(const SegmentationSample& s) {
  RgbImage img{s.height, s.width, std::vector<std::uint8_t>(static_cast<std::size_t>(3 * s.height * s.width))};
  for (Index y = 0; y < s.height; ++y)
    for (Index x = 0; x < s.width; ++x)
      for (Index c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(s.pixel(c, y, x)), 0.0, 1.0);
        img.rgb[static_cast<std::size_t>((y * s.width + x) * 3 + c)] = static_cast<std::uint8_t>(std::lround(v * 255));
      }
  return img;
}

namespace {

template <typename T>
void require_prob_map(const Tensor<T>& prob) {
  if (prob.rank() != 4 || prob.dim(0) != 1 || prob.dim(1) != 1) {
    throw ShapeError("probability map must be [1, 1, H, W], got " + shape_str(prob.shape()));
  }
}

double clamp_prob(double p) { return std::clamp(p, kCrfProbClamp, 1.0 - kCrfProbClamp); }

}  // namespace

template <typename T>
UnaryField unary_from_prob(const Tensor<T>& prob) {
  require_prob_map(prob);
  UnaryField u{prob.dim(2), prob.dim(3), {}, {}};
  for (T v : prob.data()) {
    const double p = clamp_prob(static_cast<double>(v));
    u.polyp.push_back(-std::log(p));
    u.background.push_back(-std::log1p(-p));
  }
  return u;
}

template <typename T>
Tensor<T> meanfield_refine(const RgbImage& image, const Tensor<T>& prob, const CrfParams& params,
                           const CrfObserver& observer) {
  params.validate();
  require_prob_map(prob);
  const Index H = prob.dim(2), W = prob.dim(3), N = H * W;
  if (image.height != H || image.width != W || image.rgb.size() != static_cast<std::size_t>(3 * N)) {
    throw ShapeError("crf image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " but the probability map is " + std::to_string(H) + "x" + std::to_string(W));
  }
  if (N > params.max_exact_pixels && !params.truncate) {
    throw ConfigError("crf: " + std::to_string(N) + " pixels exceed the exact-path cap of " +
                      std::to_string(params.max_exact_pixels) + "; enable truncation or downscale");
  }

  const auto u = unary_from_prob(prob);
  std::vector<double> q_fg(static_cast<std::size_t>(N)), q_bg(static_cast<std::size_t>(N));
  for (Index i = 0; i < N; ++i) {
    q_fg[i] = clamp_prob(static_cast<double>(prob.data()[i]));
    q_bg[i] = 1.0 - q_fg[i];
  }
  auto result = [&] {
    return Tensor<T>(Shape{1, 1, H, W}, std::vector<T>(q_fg.begin(), q_fg.end()));
  };
  if (params.iterations == 0 || (params.w_smooth == 0 && params.w_bilateral == 0)) {
    // Without pairwise terms every update reproduces the initial Q.
    if (observer) {
      for (int it = 1; it <= params.iterations; ++it) observer(it, q_bg, q_fg);
    }
    return result();
  }

  Index R = std::max(H, W);
  if (params.truncate) {
    R = params.window_radius > 0
            ? params.window_radius
            : static_cast<Index>(std::ceil(4 * std::max(params.theta_gamma, params.theta_alpha)));
  }
  const Index ry = std::min(R, H - 1), rx = std::min(R, W - 1);

  // Lookup tables: spatial factors per axis offset, appearance per squared
  // 8-bit color distance (0 .. 3 * 255^2).
  auto axis_table = [](Index n, double theta) {
    std::vector<double> t(static_cast<std::size_t>(n + 1));
    for (Index d = 0; d <= n; ++d) t[d] = std::exp(-static_cast<double>(d * d) / (2 * theta * theta));
    return t;
  };
  const auto sy = axis_table(ry, params.theta_gamma), sx = axis_table(rx, params.theta_gamma);
  const auto ay = axis_table(ry, params.theta_alpha), ax = axis_table(rx, params.theta_alpha);
  std::vector<double> color(3 * 255 * 255 + 1);
  for (std::size_t c = 0; c < color.size(); ++c) {
    color[c] = std::exp(-static_cast<double>(c) / (2 * params.theta_beta * params.theta_beta));
  }
  std::vector<int> rgb(image.rgb.begin(), image.rgb.end());
  const double ws = params.w_smooth, wb = params.w_bilateral;

  auto kernel = [&](Index i, Index j, Index dy, Index dx) {
    const int* a = &rgb[static_cast<std::size_t>(3 * i)];
    const int* b = &rgb[static_cast<std::size_t>(3 * j)];
    const int d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
    return ws * sy[dy] * sx[dx] + wb * ay[dy] * ax[dx] * color[static_cast<std::size_t>(d0 * d0 + d1 * d1 + d2 * d2)];
  };

  // Potts: m(bg) = sum_j k_ij Q_j(fg) and m(fg) = sum_j k_ij Q_j(bg). Offsets
  // +d and -d are added as a pair before accumulation, so mirroring the input
  // only swaps the operands of commutative additions and the result is
  // mirror-exact.
  std::vector<double> m_bg(static_cast<std::size_t>(N)), m_fg(static_cast<std::size_t>(N));
  for (int it = 1; it <= params.iterations; ++it) {
    for (Index y = 0; y < H; ++y) {
      for (Index x = 0; x < W; ++x) {
        const Index i = y * W + x;
        double acc_bg = 0, acc_fg = 0;
        for (Index dy = 0; dy <= ry; ++dy) {
          double row_bg[2] = {0, 0}, row_fg[2] = {0, 0};
          for (int side = 0; side < (dy == 0 ? 1 : 2); ++side) {
            const Index yy = side == 0 ? y + dy : y - dy;
            if (yy < 0 || yy >= H) continue;
            double r_bg = 0, r_fg = 0;
            for (Index dx = 0; dx <= rx; ++dx) {
              double t_bg[2] = {0, 0}, t_fg[2] = {0, 0};
              if (dx == 0) {
                if (dy != 0) {
                  const Index j = yy * W + x;
                  const double k = kernel(i, j, dy, 0);
                  t_bg[0] = k * q_fg[j];
                  t_fg[0] = k * q_bg[j];
                }
              } else {
                const Index xr = x + dx, xl = x - dx;
                if (xr < W) {
                  const Index j = yy * W + xr;
                  const double k = kernel(i, j, dy, dx);
                  t_bg[0] = k * q_fg[j];
                  t_fg[0] = k * q_bg[j];
                }
                if (xl >= 0) {
                  const Index j = yy * W + xl;
                  const double k = kernel(i, j, dy, dx);
                  t_bg[1] = k * q_fg[j];
                  t_fg[1] = k * q_bg[j];
                }
              }
              r_bg += t_bg[0] + t_bg[1];
              r_fg += t_fg[0] + t_fg[1];
            }
            row_bg[side] = r_bg;
            row_fg[side] = r_fg;
          }
          acc_bg += row_bg[0] + row_bg[1];
          acc_fg += row_fg[0] + row_fg[1];
        }
        m_bg[i] = acc_bg;
        m_fg[i] = acc_fg;
      }
    }
    for (Index i = 0; i < N; ++i) {
      // Q_i(l) = exp(-u_i(l) - m_i(l)) / Z, evaluated relative to the larger
      // exponent.
      const double e_bg = -u.background[i] - m_bg[i];
      const double e_fg = -u.polyp[i] - m_fg[i];
      const double top = std::max(e_bg, e_fg);
      const double a = std::exp(e_bg - top), b = std::exp(e_fg - top);
      q_bg[i] = a / (a + b);
      q_fg[i] = b / (a + b);
    }
    if (observer) observer(it, q_bg, q_fg);
  }
  return result();
}

template <typename T>
std::vector<std::uint8_t> refine_mask(const RgbImage& image, const Tensor<T>& prob, const CrfParams& params,
                                      double threshold) {
  const auto q = meanfield_refine(image, prob, params);
  std::vector<std::uint8_t> mask;
  mask.reserve(static_cast<std::size_t>(q.numel()));
  for (T v : q.data()) mask.push_back(static_cast<double>(v) >= threshold ? 1 : 0);
  return mask;
}

template UnaryField unary_from_prob(const Tensor<float>&);
template UnaryField unary_from_prob(const Tensor<double>&);
template Tensor<float> meanfield_refine(const RgbImage&, const Tensor<float>&, const CrfParams&, const CrfObserver&);
template Tensor<double> meanfield_refine(const RgbImage&, const Tensor<double>&, const CrfParams&, const CrfObserver&);
template std::vector<std::uint8_t> refine_mask(const RgbImage&, const Tensor<float>&, const CrfParams&, double);
template std::vector<std::uint8_t> refine_mask(const RgbImage&, const Tensor<double>&, const CrfParams&, double);

}  // namespace resunetpp
