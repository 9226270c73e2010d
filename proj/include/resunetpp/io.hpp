#pragma once

// Raster file I/O (OpenCV-backed, separate library from the core).

#include <filesystem>
#include <string>
#include <vector>

#include "resunetpp/data.hpp"

namespace resunetpp {

// <root>/<images_dir>/<stem>.<ext> pairs with <root>/<masks_dir>/<stem>.<ext>.
// Extensions: png, jpg, jpeg, bmp, tif, tiff (case-insensitive).
struct DatasetLayout {
  std::string images_dir = "images";
  std::string masks_dir = "masks";
};

// Samples sorted by stem. Masks are read as 8-bit grayscale and binarized at
// 128. dataset_id is the root directory name. DatasetError names the stem on
// a missing mask, an unreadable file, or an image/mask size mismatch.
std::vector<SegmentationSample> load_dataset(const std::filesystem::path& root, const DatasetLayout& layout = {});

// 8-bit RGB image as a sample with an empty (all-zero) mask.
SegmentationSample load_image(const std::filesystem::path& path);

// round(p * 65535) as a 16-bit grayscale PNG; p is clamped to [0, 1].
void write_probability_png(const std::filesystem::path& path, const std::vector<double>& prob, Index height,
                           Index width);
std::vector<double> read_probability_png(const std::filesystem::path& path, Index& height, Index& width);

// {0, 1} mask written as 8-bit {0, 255}.
void write_mask_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask, Index height,
                    Index width);

// Writes <dir>/images/<item_id>.png and <dir>/masks/<item_id>.png.
void write_dataset(const std::filesystem::path& dir, const std::vector<SegmentationSample>& samples,
                   const DatasetLayout& layout = {});

bool is_image_file(const std::filesystem::path& path);

}  // namespace resunetpp
