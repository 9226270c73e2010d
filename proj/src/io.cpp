#include "resunetpp/io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <opencv2/imgcodecs.hpp>

namespace resunetpp {

namespace fs = std::filesystem;

bool is_image_file(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

namespace {

std::map<std::string, fs::path> index_dir(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) throw DatasetError(std::string(what) + " directory not found: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    const auto stem = entry.path().stem().string();
    if (!out.emplace(stem, entry.path()).second) {
      throw DatasetError(std::string(what) + " stem '" + stem + "' appears with more than one extension in " +
                         dir.string());
    }
  }
  return out;
}

SegmentationSample from_bgr(const cv::Mat& bgr) {
  SegmentationSample s = blank_sample(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c) s.pixel(c, y, x) = static_cast<float>(row[x][2 - c]) / 255.0f;
  }
  return s;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_or_throw(const fs::path& path, const cv::Mat& m) {
  ensure_parent(path);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw FormatError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw FormatError("cannot write " + path.string());
}

}  // namespace

SegmentationSample load_image(const fs::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DatasetError("unreadable image '" + path.stem().string() + "' (" + path.string() + ")");
  auto s = from_bgr(bgr);
  s.item_id = path.stem().string();
  return s;
}

std::vector<SegmentationSample> load_dataset(const fs::path& root, const DatasetLayout& layout) {
  const auto images = index_dir(root / layout.images_dir, "image");
  const auto masks = index_dir(root / layout.masks_dir, "mask");
  if (images.empty()) throw DatasetError("no images found in " + (root / layout.images_dir).string());

  const auto dataset_id = fs::weakly_canonical(root).filename().string();
  std::vector<SegmentationSample> out;
  for (const auto& [stem, image_path] : images) {
    const auto m = masks.find(stem);
    if (m == masks.end()) throw DatasetError("missing mask for image '" + stem + "'");
    auto s = load_image(image_path);
    const cv::Mat gray = cv::imread(m->second.string(), cv::IMREAD_GRAYSCALE);
    if (gray.empty()) throw DatasetError("unreadable mask '" + stem + "' (" + m->second.string() + ")");
    if (gray.rows != s.height || gray.cols != s.width) {
      throw DatasetError("size mismatch for '" + stem + "': image " + std::to_string(s.width) + "x" +
                         std::to_string(s.height) + ", mask " + std::to_string(gray.cols) + "x" +
                         std::to_string(gray.rows));
    }
    for (int y = 0; y < gray.rows; ++y) {
      const auto* row = gray.ptr<std::uint8_t>(y);
      for (int x = 0; x < gray.cols; ++x) s.label(y, x) = row[x] >= 128 ? 1 : 0;
    }
    s.dataset_id = dataset_id;
    out.push_back(std::move(s));
  }
  return out;
}

void write_probability_png(const fs::path& path, const std::vector<double>& prob, Index height, Index width) {
  if (prob.size() != static_cast<std::size_t>(height * width)) throw ShapeError("probability map size mismatch");
  cv::Mat m(static_cast<int>(height), static_cast<int>(width), CV_16UC1);
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x) {
      const double p = std::clamp(prob[static_cast<std::size_t>(y * width + x)], 0.0, 1.0);
      m.at<std::uint16_t>(static_cast<int>(y), static_cast<int>(x)) = static_cast<std::uint16_t>(std::lround(p * 65535));
    }
  write_or_throw(path, m);
}

std::vector<double> read_probability_png(const fs::path& path, Index& height, Index& width) {
  const cv::Mat m = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw DatasetError("unreadable probability map '" + path.stem().string() + "'");
  height = m.rows;
  width = m.cols;
  const double scale = m.depth() == CV_16U ? 65535.0 : 255.0;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.rows * m.cols));
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      out.push_back((m.depth() == CV_16U ? m.at<std::uint16_t>(y, x) : m.at<std::uint8_t>(y, x)) / scale);
    }
  return out;
}

void write_mask_png(const fs::path& path, const std::vector<std::uint8_t>& mask, Index height, Index width) {
  if (mask.size() != static_cast<std::size_t>(height * width)) throw ShapeError("mask size mismatch");
  cv::Mat m(static_cast<int>(height), static_cast<int>(width), CV_8UC1);
  for (Index i = 0; i < height * width; ++i) m.data[i] = mask[static_cast<std::size_t>(i)] ? 255 : 0;
  write_or_throw(path, m);
}

void write_dataset(const fs::path& dir, const std::vector<SegmentationSample>& samples, const DatasetLayout& layout) {
  for (const auto& s : samples) {
    cv::Mat bgr(static_cast<int>(s.height), static_cast<int>(s.width), CV_8UC3);
    for (Index y = 0; y < s.height; ++y)
      for (Index x = 0; x < s.width; ++x)
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(static_cast<double>(s.pixel(c, y, x)), 0.0, 1.0);
          bgr.at<cv::Vec3b>(static_cast<int>(y), static_cast<int>(x))[2 - c] =
              static_cast<std::uint8_t>(std::lround(v * 255));
        }
    write_or_throw(dir / layout.images_dir / (s.item_id + ".png"), bgr);
    write_mask_png(dir / layout.masks_dir / (s.item_id + ".png"), s.mask, s.height, s.width);
  }
}

}  // namespace resunetpp
