#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "resunetpp/densecrf.hpp"
#include "resunetpp/tta.hpp"

namespace resunetpp {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
};

// Masks hold {0, 1}; anything else is a DatasetError.
ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

// Empty-denominator convention: both masks empty -> 1, otherwise 0.
double dsc(const ConfusionCounts& c);
double iou(const ConfusionCounts& c);
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);
double background_iou(const ConfusionCounts& c);  // tn / (tn + fp + fn)
double miou(const ConfusionCounts& c);            // mean of polyp and background IoU
double miou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0, 0) to (1, 1), one step per distinct score
  double auc = 0;
};

// Threshold sweep over distinct scores with trapezoidal integration; equal to
// the normalized Mann-Whitney U with ties counted half. Throws NumericError
// when the labels hold a single class (AUC undefined).
RocCurve roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct EvalOptions {
  double threshold = 0.5;
  bool tta = false;
  TtaConfig tta_config;
  bool crf = false;
  CrfParams crf_params;
  bool pooled = false;  // aggregate by pooling pixels instead of averaging images
};

struct ImageMetrics {
  std::string item_id;
  ConfusionCounts counts;
  double dsc = 0;
  double iou = 0;
  double miou = 0;
  double precision = 0;
  double recall = 0;
  double auc = 0;  // NaN when the ground truth holds a single class

  static ImageMetrics from(std::string item_id, const ConfusionCounts& c, double auc);
};

struct MetricReport {
  std::string variant;  // base, crf, tta, tta_crf
  double threshold = 0.5;
  bool pooled = false;
  std::vector<ImageMetrics> images;
  ImageMetrics aggregate;  // item_id "mean" or "pooled"
  std::size_t auc_images = 0;  // images with a defined per-image AUC
  RocCurve roc;                // over all pixels of all images
  std::map<std::string, std::string> provenance;

  // Provenance as "# key=value" lines, a header, one row per image, then
  // the aggregate row.
  std::string to_csv() const;
  std::string to_table() const;
  std::string roc_csv() const;  // "fpr,tpr"
};

// Per sample: probability map (TTA average when enabled), then CRF when
// enabled, then threshold. Aggregates are unweighted means over images
// unless `pooled`; the mean AUC skips images where it is undefined.
template <typename T>
MetricReport evaluate(const Predictor<T>& predict, const std::vector<SegmentationSample>& samples,
                      const EvalOptions& options);

template <typename T>
MetricReport evaluate(ResUNetPP<T>& model, const std::vector<SegmentationSample>& samples,
                      const EvalOptions& options);

// The four rows of the comparison table: base, +CRF, +TTA, +TTA+CRF.
std::vector<std::pair<std::string, EvalOptions>> report_variants(const EvalOptions& base);

}  // namespace resunetpp
