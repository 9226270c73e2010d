#include "resunetpp/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "resunetpp/random.hpp"

namespace resunetpp {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::size_t plane(const SegmentationSample& s) { return static_cast<std::size_t>(s.height * s.width); }

// Reflect-101 border: ... 2 1 | 0 1 2 ... n-1 | n-2 ...
Index reflect(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * n - 2;
  i = std::abs(i) % period;
  return i >= n ? period - i : i;
}

float bilinear(const float* p, Index h, Index w, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const double wy = y - fy, wx = x - fx;
  const Index y0 = static_cast<Index>(fy), x0 = static_cast<Index>(fx);
  const Index ya = reflect(y0, h), yb = reflect(y0 + 1, h);
  const Index xa = reflect(x0, w), xb = reflect(x0 + 1, w);
  const double top = p[ya * w + xa] * (1 - wx) + p[ya * w + xb] * wx;
  const double bot = p[yb * w + xa] * (1 - wx) + p[yb * w + xb] * wx;
  return static_cast<float>(top * (1 - wy) + bot * wy);
}

std::uint8_t nearest(const std::uint8_t* p, Index h, Index w, double y, double x) {
  const Index yi = reflect(static_cast<Index>(std::lround(y)), h);
  const Index xi = reflect(static_cast<Index>(std::lround(x)), w);
  return p[yi * w + xi];
}

// Backward warp: every output pixel (y, x) samples the input at map(y, x).
// Image bilinear, mask nearest, same coordinates.
template <typename Map>
SegmentationSample warp(const SegmentationSample& s, Map&& map) {
  SegmentationSample out = s;
  const Index h = s.height, w = s.width;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const auto [sy, sx] = map(y, x);
      for (Index c = 0; c < 3; ++c) {
        out.pixel(c, y, x) = bilinear(s.image.data() + c * h * w, h, w, sy, sx);
      }
      out.label(y, x) = nearest(s.mask.data(), h, w, sy, sx);
    }
  }
  return out;
}

// Exact index permutation; src(y, x) gives the input coordinate for output
// pixel (y, x) of an out_h x out_w result.
template <typename Src>
SegmentationSample permute(const SegmentationSample& s, Index out_h, Index out_w, Src&& src) {
  SegmentationSample out = s;
  out.height = out_h;
  out.width = out_w;
  for (Index y = 0; y < out_h; ++y) {
    for (Index x = 0; x < out_w; ++x) {
      const auto [iy, ix] = src(y, x);
      for (Index c = 0; c < 3; ++c) out.pixel(c, y, x) = s.pixel(c, iy, ix);
      out.label(y, x) = s.label(iy, ix);
    }
  }
  return out;
}

void clamp01(SegmentationSample& s) {
  for (auto& v : s.image) v = std::clamp(v, 0.0f, 1.0f);
}

// Separable Gaussian smoothing of a single H x W field with reflect borders.
std::vector<double> gaussian_smooth(const std::vector<double>& f, Index h, Index w, double sigma) {
  const Index r = std::max<Index>(1, static_cast<Index>(std::ceil(3 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0;
  for (Index i = -r; i <= r; ++i) total += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  std::vector<double> tmp(f.size()), out(f.size());
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (Index i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * f[y * w + reflect(x + i, w)];
      tmp[y * w + x] = acc;
    }
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      double acc = 0;
      for (Index i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp[reflect(y + i, h) * w + x];
      out[y * w + x] = acc;
    }
  return out;
}

// Piecewise-linear axis remap for grid distortion: cell k of the output grid
// maps onto a distorted cell of the input.
std::vector<double> distorted_axis(Index n, int steps, double limit, Rng& rng) {
  std::vector<double> edges(static_cast<std::size_t>(steps + 1), 0.0);
  for (int k = 1; k <= steps; ++k) edges[k] = edges[k - 1] + 1.0 + rng.uniform(-limit, limit);
  for (auto& e : edges) e *= static_cast<double>(n - 1) / edges.back();
  std::vector<double> map(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const double t = n > 1 ? static_cast<double>(i) * steps / static_cast<double>(n - 1) : 0.0;
    const int k = std::min(steps - 1, static_cast<int>(t));
    map[i] = edges[k] + (t - k) * (edges[k + 1] - edges[k]);
  }
  return map;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0;
  if (d <= 0) {
    h = 0;
  } else if (mx == r) {
    h = 60 * std::fmod((g - b) / d + 6, 6.0);
  } else if (mx == g) {
    h = 60 * ((b - r) / d + 2);
  } else {
    h = 60 * ((r - g) / d + 4);
  }
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0);
  const double c = v * s, x = c * (1 - std::abs(std::fmod(h / 60, 2.0) - 1)), m = v - c;
  const int sector = std::min(5, static_cast<int>(h / 60));
  static constexpr std::array<std::array<int, 3>, 6> pick{{{0, 1, 2}, {1, 0, 2}, {2, 0, 1}, {2, 1, 0}, {1, 2, 0}, {0, 2, 1}}};
  const double vals[3] = {c, x, 0};
  r = vals[pick[sector][0]] + m;
  g = vals[pick[sector][1]] + m;
  b = vals[pick[sector][2]] + m;
}

SegmentationSample box_blur(const SegmentationSample& s, Index k) {
  SegmentationSample out = s;
  const Index r = k / 2, h = s.height, w = s.width;
  std::vector<float> tmp(plane(s));
  for (Index c = 0; c < 3; ++c) {
    const float* src = s.image.data() + c * h * w;
    float* dst = out.image.data() + c * h * w;
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double acc = 0;
        for (Index i = -r; i <= r; ++i) acc += src[y * w + reflect(x + i, w)];
        tmp[y * w + x] = static_cast<float>(acc / static_cast<double>(k));
      }
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        double acc = 0;
        for (Index i = -r; i <= r; ++i) acc += tmp[reflect(y + i, h) * w + x];
        dst[y * w + x] = static_cast<float>(acc / static_cast<double>(k));
      }
  }
  return out;
}

SegmentationSample rotate(const SegmentationSample& s, double degrees) {
  const double quarter = degrees / 90.0;
  if (std::abs(quarter - std::round(quarter)) < 1e-12 && s.height == s.width) {
    return rotate90(s, static_cast<int>(std::lround(quarter)));
  }
  const double a = degrees * kPi / 180.0, ca = std::cos(a), sa = std::sin(a);
  const double cy = 0.5 * static_cast<double>(s.height - 1), cx = 0.5 * static_cast<double>(s.width - 1);
  return warp(s, [&](Index y, Index x) {
    const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
    return std::pair{cy + dx * sa + dy * ca, cx + dx * ca - dy * sa};
  });
}

const std::map<AugmentKind, std::string>& kind_names() {
  static const std::map<AugmentKind, std::string> names{
      {AugmentKind::CenterCrop, "center_crop"},
      {AugmentKind::RandomRotation, "random_rotation"},
      {AugmentKind::Transpose, "transpose"},
      {AugmentKind::ElasticTransform, "elastic_transform"},
      {AugmentKind::GridDistortion, "grid_distortion"},
      {AugmentKind::OpticalDistortion, "optical_distortion"},
      {AugmentKind::VFlip, "vflip"},
      {AugmentKind::HFlip, "hflip"},
      {AugmentKind::Grayscale, "grayscale"},
      {AugmentKind::RandomBrightness, "random_brightness"},
      {AugmentKind::RandomContrast, "random_contrast"},
      {AugmentKind::HueSaturation, "hue_saturation"},
      {AugmentKind::RgbShift, "rgb_shift"},
      {AugmentKind::CoarseDropout, "coarse_dropout"},
      {AugmentKind::Blur, "blur"},
  };
  return names;
}

double default_magnitude(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::CenterCrop: return 0.7;
    case AugmentKind::RandomRotation: return 90;
    case AugmentKind::ElasticTransform: return 34;
    case AugmentKind::GridDistortion: return 0.3;
    case AugmentKind::OpticalDistortion: return 0.3;
    case AugmentKind::RandomBrightness: return 0.2;
    case AugmentKind::RandomContrast: return 0.2;
    case AugmentKind::HueSaturation: return 20;
    case AugmentKind::RgbShift: return 20;
    case AugmentKind::CoarseDropout: return 0.1;
    case AugmentKind::Blur: return 7;
    default: return 0;
  }
}

SegmentationSample apply_op(const SegmentationSample& s, const AugmentOp& op, Rng& rng) {
  const double m = op.magnitude > 0 ? op.magnitude : default_magnitude(op.kind);
  const Index h = s.height, w = s.width;
  switch (op.kind) {
    case AugmentKind::HFlip: return hflip(s);
    case AugmentKind::VFlip: return vflip(s);
    case AugmentKind::Transpose: return transpose(s);
    case AugmentKind::RandomRotation: return rotate(s, rng.uniform(-m, m));
    case AugmentKind::CenterCrop: {
      const double f = rng.uniform(std::min(m, 1.0), 1.0);
      const double ch = f * static_cast<double>(h), cw = f * static_cast<double>(w);
      const double top = 0.5 * (static_cast<double>(h) - ch), left = 0.5 * (static_cast<double>(w) - cw);
      return warp(s, [&](Index y, Index x) {
        return std::pair{top + (static_cast<double>(y) + 0.5) * ch / static_cast<double>(h) - 0.5,
                         left + (static_cast<double>(x) + 0.5) * cw / static_cast<double>(w) - 0.5};
      });
    }
    case AugmentKind::ElasticTransform: {
      std::vector<double> dx(plane(s)), dy(plane(s));
      for (auto& v : dx) v = rng.uniform(-1, 1);
      for (auto& v : dy) v = rng.uniform(-1, 1);
      dx = gaussian_smooth(dx, h, w, 4.0);
      dy = gaussian_smooth(dy, h, w, 4.0);
      return warp(s, [&](Index y, Index x) {
        const auto i = static_cast<std::size_t>(y * w + x);
        return std::pair{static_cast<double>(y) + m * dy[i], static_cast<double>(x) + m * dx[i]};
      });
    }
    case AugmentKind::GridDistortion: {
      const auto ys = distorted_axis(h, 5, m, rng);
      const auto xs = distorted_axis(w, 5, m, rng);
      return warp(s, [&](Index y, Index x) { return std::pair{ys[y], xs[x]}; });
    }
    case AugmentKind::OpticalDistortion: {
      const double k = rng.uniform(-m, m);
      const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
      return warp(s, [&](Index y, Index x) {
        const double u = (static_cast<double>(x) - cx) / std::max(cx, 1.0);
        const double v = (static_cast<double>(y) - cy) / std::max(cy, 1.0);
        const double f = 1 + k * (u * u + v * v);
        return std::pair{cy + v * f * cy, cx + u * f * cx};
      });
    }
    case AugmentKind::Grayscale: {
      SegmentationSample out = s;
      const std::size_t n = plane(s);
      for (std::size_t i = 0; i < n; ++i) {
        const float g = 0.299f * s.image[i] + 0.587f * s.image[n + i] + 0.114f * s.image[2 * n + i];
        out.image[i] = out.image[n + i] = out.image[2 * n + i] = g;
      }
      return out;
    }
    case AugmentKind::RandomBrightness: {
      SegmentationSample out = s;
      const auto b = static_cast<float>(rng.uniform(-m, m));
      for (auto& v : out.image) v += b;
      clamp01(out);
      return out;
    }
    case AugmentKind::RandomContrast: {
      SegmentationSample out = s;
      const double c = 1 + rng.uniform(-m, m);
      double mean = 0;
      for (float v : s.image) mean += v;
      mean /= static_cast<double>(s.image.size());
      for (auto& v : out.image) v = static_cast<float>((v - mean) * c + mean);
      clamp01(out);
      return out;
    }
    case AugmentKind::HueSaturation: {
      SegmentationSample out = s;
      const double dh = rng.uniform(-m, m);
      const double sat = 1 + rng.uniform(-m, m) / 100.0;
      const std::size_t n = plane(s);
      for (std::size_t i = 0; i < n; ++i) {
        double hh, ss, vv, r, g, b;
        rgb_to_hsv(s.image[i], s.image[n + i], s.image[2 * n + i], hh, ss, vv);
        hsv_to_rgb(hh + dh, std::clamp(ss * sat, 0.0, 1.0), vv, r, g, b);
        out.image[i] = static_cast<float>(r);
        out.image[n + i] = static_cast<float>(g);
        out.image[2 * n + i] = static_cast<float>(b);
      }
      clamp01(out);
      return out;
    }
    case AugmentKind::RgbShift: {
      SegmentationSample out = s;
      const std::size_t n = plane(s);
      for (std::size_t c = 0; c < 3; ++c) {
        const auto d = static_cast<float>(rng.uniform(-m, m) / 255.0);
        for (std::size_t i = 0; i < n; ++i) out.image[c * n + i] += d;
      }
      clamp01(out);
      return out;
    }
    case AugmentKind::CoarseDropout: {
      SegmentationSample out = s;
      const Index holes = rng.integer(1, 8);
      const Index max_h = std::max<Index>(1, std::lround(m * static_cast<double>(h)));
      const Index max_w = std::max<Index>(1, std::lround(m * static_cast<double>(w)));
      for (Index k = 0; k < holes; ++k) {
        const Index hh = rng.integer(1, max_h), ww = rng.integer(1, max_w);
        const Index y0 = rng.index(h - hh + 1), x0 = rng.index(w - ww + 1);
        for (Index c = 0; c < 3; ++c)
          for (Index y = y0; y < y0 + hh; ++y)
            for (Index x = x0; x < x0 + ww; ++x) out.pixel(c, y, x) = 0.0f;
      }
      return out;
    }
    case AugmentKind::Blur: {
      const Index max_k = std::max<Index>(3, static_cast<Index>(m));
      const Index k = 3 + 2 * rng.index((max_k - 3) / 2 + 1);
      return box_blur(s, k);
    }
  }
  throw ConfigError("unsupported augmentation kind");
}

}  // namespace

// ---------------------------------------------------------------------------

void SegmentationSample::validate() const {
  const std::string who = "sample '" + item_id + "'";
  if (height < 1 || width < 1) throw DatasetError(who + " has an empty image");
  if (image.size() != static_cast<std::size_t>(3 * height * width)) {
    throw DatasetError(who + " image buffer does not hold 3 x " + std::to_string(height) + " x " +
                       std::to_string(width) + " values");
  }
  if (mask.size() != static_cast<std::size_t>(height * width)) {
    throw DatasetError(who + " mask size differs from the image size");
  }
  for (auto v : mask) {
    if (v > 1) throw DatasetError(who + " mask is not binary");
  }
}

SegmentationSample blank_sample(Index height, Index width) {
  SegmentationSample s;
  s.height = height;
  s.width = width;
  s.image.assign(static_cast<std::size_t>(3 * height * width), 0.0f);
  s.mask.assign(static_cast<std::size_t>(height * width), 0);
  return s;
}

template <typename T>
Batch<T> make_batch(const std::vector<SegmentationSample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DatasetError("empty batch");
  const auto& first = samples.at(indices[0]);
  const Index h = first.height, w = first.width, b = static_cast<Index>(indices.size());
  Batch<T> out{Tensor<T>(Shape{b, 3, h, w}), Tensor<T>(Shape{b, 1, h, w})};
  auto img = out.images.data();
  auto msk = out.masks.data();
  const auto n = static_cast<std::size_t>(h * w);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& s = samples.at(indices[k]);
    if (s.height != h || s.width != w) {
      throw ShapeError("batch mixes image sizes: '" + first.item_id + "' is " + std::to_string(h) + "x" +
                       std::to_string(w) + ", '" + s.item_id + "' is " + std::to_string(s.height) + "x" +
                       std::to_string(s.width) + "; resize the dataset first");
    }
    std::copy(s.image.begin(), s.image.end(), img.begin() + static_cast<std::ptrdiff_t>(k * 3 * n));
    std::copy(s.mask.begin(), s.mask.end(), msk.begin() + static_cast<std::ptrdiff_t>(k * n));
  }
  return out;
}

template <typename T>
Tensor<T> image_tensor(const SegmentationSample& s) {
  return Tensor<T>(Shape{1, 3, s.height, s.width}, std::vector<T>(s.image.begin(), s.image.end()));
}

template <typename T>
Tensor<T> mask_tensor(const SegmentationSample& s) {
  return Tensor<T>(Shape{1, 1, s.height, s.width}, std::vector<T>(s.mask.begin(), s.mask.end()));
}

template Batch<float> make_batch<float>(const std::vector<SegmentationSample>&, std::span<const std::size_t>);
template Batch<double> make_batch<double>(const std::vector<SegmentationSample>&, std::span<const std::size_t>);
template Tensor<float> image_tensor<float>(const SegmentationSample&);
template Tensor<double> image_tensor<double>(const SegmentationSample&);
template Tensor<float> mask_tensor<float>(const SegmentationSample&);
template Tensor<double> mask_tensor<double>(const SegmentationSample&);

// ---------------------------------------------------------------------------

SegmentationSample make_blob_sample(const BlobConfig& config, std::uint64_t seed, std::string item_id) {
  Rng rng(seed);
  const Index n = config.size;
  SegmentationSample s = blank_sample(n, n);
  s.item_id = std::move(item_id);
  s.dataset_id = "synthetic";

  // Mucosa-like background: reddish with a slow shading gradient.
  const double base[3] = {rng.uniform(0.45, 0.6), rng.uniform(0.22, 0.32), rng.uniform(0.2, 0.3)};
  const double gy = rng.uniform(-0.15, 0.15), gx = rng.uniform(-0.15, 0.15);
  const double blob[3] = {rng.uniform(0.8, 0.95), rng.uniform(0.55, 0.7), rng.uniform(0.4, 0.55)};

  struct Ellipse {
    double cy, cx, ry, rx, ca, sa;
  };
  std::vector<Ellipse> blobs;
  const Index count = rng.integer(config.min_blobs, config.max_blobs);
  for (Index k = 0; k < count; ++k) {
    const double ry = rng.uniform(config.min_radius, config.max_radius) * static_cast<double>(n);
    const double rx = rng.uniform(config.min_radius, config.max_radius) * static_cast<double>(n);
    const double margin = std::max(ry, rx);
    const double cy = rng.uniform(margin * 0.6, static_cast<double>(n) - margin * 0.6);
    const double cx = rng.uniform(margin * 0.6, static_cast<double>(n) - margin * 0.6);
    const double a = rng.uniform(0, kPi);
    blobs.push_back({cy, cx, ry, rx, std::cos(a), std::sin(a)});
  }

  for (Index y = 0; y < n; ++y) {
    for (Index x = 0; x < n; ++x) {
      const double ty = static_cast<double>(y) / static_cast<double>(n) - 0.5;
      const double tx = static_cast<double>(x) / static_cast<double>(n) - 0.5;
      double inside = 0;  // largest normalized depth inside any ellipse
      for (const auto& e : blobs) {
        const double dy = static_cast<double>(y) - e.cy, dx = static_cast<double>(x) - e.cx;
        const double u = (dx * e.ca + dy * e.sa) / e.rx, v = (-dx * e.sa + dy * e.ca) / e.ry;
        const double r2 = u * u + v * v;
        if (r2 <= 1.0) inside = std::max(inside, 1.0 - r2);
      }
      s.label(y, x) = inside > 0 ? 1 : 0;
      for (Index c = 0; c < 3; ++c) {
        double v = base[c] * (1 + gy * ty + gx * tx);
        if (inside > 0) v = blob[c] * (0.85 + 0.15 * std::sqrt(inside));
        v += config.noise * rng.normal();
        s.pixel(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return s;
}

std::vector<SegmentationSample> make_blob_dataset(std::size_t count, const BlobConfig& config, std::uint64_t seed,
                                                  const std::string& dataset_id) {
  std::vector<SegmentationSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "blob_%04zu", i);
    out.push_back(make_blob_sample(config, mix_seed(seed, i), id));
    out.back().dataset_id = dataset_id;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string SplitManifest::to_text() const {
  std::ostringstream os;
  os << "# split manifest\n";
  os << "# seed " << seed << '\n';
  os << "# ratios " << ratios.train << ' ' << ratios.val << ' ' << ratios.test << '\n';
  auto section = [&](const char* name, const std::vector<std::string>& ids) {
    os << '[' << name << "]\n";
    for (const auto& id : ids) os << id << '\n';
  };
  section("train", train);
  section("val", val);
  section("test", test);
  return os.str();
}

SplitManifest SplitManifest::parse(const std::string& text) {
  SplitManifest m;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string>* current = nullptr;
  bool have_seed = false, have_ratios = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.rfind("# seed ", 0) == 0) {
      m.seed = std::stoull(line.substr(7));
      have_seed = true;
    } else if (line.rfind("# ratios ", 0) == 0) {
      std::istringstream r(line.substr(9));
      if (!(r >> m.ratios.train >> m.ratios.val >> m.ratios.test)) throw FormatError("bad ratios line in manifest");
      have_ratios = true;
    } else if (line[0] == '#') {
      continue;
    } else if (line == "[train]") {
      current = &m.train;
    } else if (line == "[val]") {
      current = &m.val;
    } else if (line == "[test]") {
      current = &m.test;
    } else {
      if (!current) throw FormatError("manifest item '" + line + "' appears before any section");
      current->push_back(line);
    }
  }
  if (!have_seed || !have_ratios) throw FormatError("manifest header lacks seed or ratios");
  return m;
}

void SplitManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DatasetError("cannot write manifest " + path.string());
  out << to_text();
}

SplitManifest SplitManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot read manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

SplitManifest split(const std::vector<SegmentationSample>& samples, std::uint64_t seed, SplitRatios ratios) {
  if (samples.size() < kMinSplitSamples) {
    throw DatasetError("need at least " + std::to_string(kMinSplitSamples) + " samples to split, got " +
                       std::to_string(samples.size()));
  }
  if (ratios.train <= 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.item_id);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DatasetError("duplicate item ids in dataset");

  Rng rng(seed);
  rng.shuffle(ids.begin(), ids.end());
  const double n = static_cast<double>(ids.size());
  const auto n_val = static_cast<std::size_t>(std::llround(n * ratios.val));
  const auto n_test = static_cast<std::size_t>(std::llround(n * ratios.test));
  const std::size_t n_train = ids.size() - n_val - n_test;

  SplitManifest m;
  m.seed = seed;
  m.ratios = ratios;
  m.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  m.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  m.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return m;
}

SplitSets apply_split(const std::vector<SegmentationSample>& samples, const SplitManifest& manifest) {
  std::map<std::string, const SegmentationSample*> by_id;
  for (const auto& s : samples) by_id[s.item_id] = &s;
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<SegmentationSample> out;
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DatasetError("manifest item '" + id + "' is not in the dataset");
      out.push_back(*it->second);
    }
    return out;
  };
  return {pick(manifest.train), pick(manifest.val), pick(manifest.test)};
}

// ---------------------------------------------------------------------------

SegmentationSample resize(const SegmentationSample& s, Index height, Index width) {
  if (height < 1 || width < 1) throw ConfigError("resize target must be positive");
  if (height == s.height && width == s.width) return s;
  SegmentationSample out = s;
  out.height = height;
  out.width = width;
  out.image.assign(static_cast<std::size_t>(3 * height * width), 0.0f);
  out.mask.assign(static_cast<std::size_t>(height * width), 0);
  const double sy = static_cast<double>(s.height) / static_cast<double>(height);
  const double sx = static_cast<double>(s.width) / static_cast<double>(width);
  for (Index y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(s.height - 1));
    const Index ny = std::min<Index>(static_cast<Index>((static_cast<double>(y) + 0.5) * sy), s.height - 1);
    for (Index x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(s.width - 1));
      const Index nx = std::min<Index>(static_cast<Index>((static_cast<double>(x) + 0.5) * sx), s.width - 1);
      for (Index c = 0; c < 3; ++c) {
        out.pixel(c, y, x) = bilinear(s.image.data() + c * s.height * s.width, s.height, s.width, fy, fx);
      }
      out.label(y, x) = s.label(ny, nx);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(AugmentKind kind) { return kind_names().at(kind); }

AugmentKind parse_augment_kind(const std::string& name) {
  for (const auto& [k, n] : kind_names()) {
    if (n == name) return k;
  }
  throw ConfigError("unsupported augmentation op '" + name + "'");
}

bool is_geometric(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::CenterCrop:
    case AugmentKind::RandomRotation:
    case AugmentKind::Transpose:
    case AugmentKind::ElasticTransform:
    case AugmentKind::GridDistortion:
    case AugmentKind::OpticalDistortion:
    case AugmentKind::VFlip:
    case AugmentKind::HFlip:
      return true;
    default:
      return false;
  }
}

const std::vector<AugmentKind>& all_augment_kinds() {
  static const std::vector<AugmentKind> kinds = [] {
    std::vector<AugmentKind> k;
    for (const auto& [kind, name] : kind_names()) k.push_back(kind);
    return k;
  }();
  return kinds;
}

AugmentOp default_op(AugmentKind kind, double probability) {
  return {kind, probability, default_magnitude(kind)};
}

std::vector<AugmentOp> default_augmentations(double probability) {
  std::vector<AugmentOp> ops;
  for (auto k : all_augment_kinds()) ops.push_back(default_op(k, probability));
  return ops;
}

SegmentationSample augment(const SegmentationSample& s, const std::vector<AugmentOp>& ops, std::uint64_t seed) {
  s.validate();
  Rng rng(seed);
  SegmentationSample out = s;
  for (const auto& op : ops) {
    if (!kind_names().count(op.kind)) throw ConfigError("unsupported augmentation kind");
    if (op.probability < 0 || op.probability > 1) {
      throw ConfigError("augmentation " + to_string(op.kind) + ": probability must lie in [0, 1]");
    }
    if (rng.uniform() < op.probability) out = apply_op(out, op, rng);
  }
  return out;
}

SegmentationSample rotate90(const SegmentationSample& s, int k) {
  k = ((k % 4) + 4) % 4;
  const Index h = s.height, w = s.width;
  switch (k) {
    case 1: return permute(s, w, h, [&](Index y, Index x) { return std::pair{x, w - 1 - y}; });
    case 2: return permute(s, h, w, [&](Index y, Index x) { return std::pair{h - 1 - y, w - 1 - x}; });
    case 3: return permute(s, w, h, [&](Index y, Index x) { return std::pair{h - 1 - x, y}; });
    default: return s;
  }
}

SegmentationSample hflip(const SegmentationSample& s) {
  return permute(s, s.height, s.width, [&](Index y, Index x) { return std::pair{y, s.width - 1 - x}; });
}

SegmentationSample vflip(const SegmentationSample& s) {
  return permute(s, s.height, s.width, [&](Index y, Index x) { return std::pair{s.height - 1 - y, x}; });
}

SegmentationSample transpose(const SegmentationSample& s) {
  return permute(s, s.width, s.height, [](Index y, Index x) { return std::pair{x, y}; });
}

// ---------------------------------------------------------------------------

PreparedData prepare_data(const std::vector<SegmentationSample>& samples, const DataConfig& config,
                          const SplitManifest* manifest) {
  std::vector<SegmentationSample> sized;
  sized.reserve(samples.size());
  for (const auto& s : samples) {
    s.validate();
    sized.push_back(config.image_size > 0 ? resize(s, config.image_size) : s);
  }
  PreparedData out;
  out.manifest = manifest ? *manifest : split(sized, config.split_seed, config.ratios);
  out.sets = apply_split(sized, out.manifest);

  // Validation and test images are never augmented.
  if (!config.augmentations.empty() && config.augment_copies > 0) {
    std::vector<SegmentationSample> train;
    for (std::size_t i = 0; i < out.sets.train.size(); ++i) {
      const auto& s = out.sets.train[i];
      train.push_back(s);
      for (int c = 1; c <= config.augment_copies; ++c) {
        auto a = augment(s, config.augmentations, mix_seed(config.augment_seed, i * 1000 + static_cast<std::size_t>(c)));
        a.item_id += "#aug" + std::to_string(c);
        train.push_back(std::move(a));
      }
    }
    out.sets.train = std::move(train);
  }
  return out;
}

}  // namespace resunetpp
