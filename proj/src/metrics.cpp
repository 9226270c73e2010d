#include "resunetpp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace resunetpp {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("confusion: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                     std::to_string(gt.size()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] > 1 || gt[i] > 1) throw DatasetError("confusion: masks must be binary {0, 1}");
    if (pred[i]) {
      gt[i] ? ++c.tp : ++c.fp;
    } else {
      gt[i] ? ++c.fn : ++c.tn;
    }
  }
  return c;
}

namespace {

// num / den with the empty/empty convention: den == 0 means both the
// prediction and the reference set are empty.
double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double dsc(const ConfusionCounts& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }
double iou(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp + c.fn); }

double precision(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
  return ratio(c.tp, c.tp + c.fp);
}

double recall(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return ratio(c.tp, c.tp + c.fn);
}

double background_iou(const ConfusionCounts& c) { return ratio(c.tn, c.tn + c.fp + c.fn); }
double miou(const ConfusionCounts& c) { return 0.5 * (iou(c) + background_iou(c)); }
double miou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) { return miou(confusion(pred, gt)); }

RocCurve roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc: scores and labels differ in length");
  std::int64_t pos = 0, neg = 0;
  for (auto l : labels) {
    if (l > 1) throw DatasetError("roc: labels must be binary {0, 1}");
    l ? ++pos : ++neg;
  }
  if (pos == 0 || neg == 0) throw NumericError("roc: AUC is undefined when the labels hold a single class");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.points.push_back({0, 0});
  std::int64_t tp = 0, fp = 0;
  double area = 0;
  for (std::size_t k = 0; k < order.size();) {
    // Lower the threshold past one group of tied scores.
    const double s = scores[order[k]];
    const std::int64_t tp0 = tp, fp0 = fp;
    for (; k < order.size() && scores[order[k]] == s; ++k) labels[order[k]] ? ++tp : ++fp;
    area += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0) * 0.5;
    roc.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos)});
  }
  roc.auc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return roc;
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  return roc_curve(scores, labels).auc;
}

ImageMetrics ImageMetrics::from(std::string item_id, const ConfusionCounts& c, double auc) {
  ImageMetrics m;
  m.item_id = std::move(item_id);
  m.counts = c;
  m.dsc = resunetpp::dsc(c);
  m.iou = resunetpp::iou(c);
  m.miou = resunetpp::miou(c);
  m.precision = resunetpp::precision(c);
  m.recall = resunetpp::recall(c);
  m.auc = auc;
  return m;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fixed(double v) {
  if (std::isnan(v)) return "-";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "# variant=" << variant << '\n';
  os << "# threshold=" << num(threshold) << '\n';
  os << "# aggregate=" << (pooled ? "pooled" : "per_image_mean") << '\n';
  for (const auto& [k, v] : provenance) os << "# " << k << '=' << v << '\n';
  os << "item_id,dsc,iou,miou,precision,recall,auc,tp,fp,fn,tn\n";
  auto row = [&](const ImageMetrics& m) {
    os << m.item_id << ',' << num(m.dsc) << ',' << num(m.iou) << ',' << num(m.miou) << ',' << num(m.precision) << ','
       << num(m.recall) << ',' << num(m.auc) << ',' << m.counts.tp << ',' << m.counts.fp << ',' << m.counts.fn << ','
       << m.counts.tn << '\n';
  };
  for (const auto& m : images) row(m);
  row(aggregate);
  return os.str();
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << "variant " << variant << "  threshold " << fixed(threshold) << "  images " << images.size() << "  aggregate "
     << (pooled ? "pooled" : "per-image mean") << '\n';
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %9s %8s %8s\n", "item", "DSC", "IoU", "mIoU", "Precision",
                "Recall", "AUC");
  os << line;
  auto row = [&](const ImageMetrics& m) {
    std::snprintf(line, sizeof line, "%-24s %8s %8s %8s %9s %8s %8s\n", m.item_id.c_str(), fixed(m.dsc).c_str(),
                  fixed(m.iou).c_str(), fixed(m.miou).c_str(), fixed(m.precision).c_str(), fixed(m.recall).c_str(),
                  fixed(m.auc).c_str());
    os << line;
  };
  for (const auto& m : images) row(m);
  row(aggregate);
  return os.str();
}

std::string MetricReport::roc_csv() const {
  std::string out = "fpr,tpr\n";
  for (const auto& p : roc.points) out += num(p.fpr) + "," + num(p.tpr) + "\n";
  return out;
}

template <typename T>
MetricReport evaluate(const Predictor<T>& predict, const std::vector<SegmentationSample>& samples,
                      const EvalOptions& options) {
  if (samples.empty()) throw DatasetError("cannot evaluate an empty sample list");
  if (options.tta) options.tta_config.validate();
  if (options.crf) options.crf_params.validate();

  MetricReport report;
  report.threshold = options.threshold;
  report.pooled = options.pooled;

  std::vector<double> all_scores;
  std::vector<std::uint8_t> all_labels;
  ConfusionCounts pooled;
  for (const auto& s : samples) {
    s.validate();
    const auto x = image_tensor<T>(s);
    Tensor<T> prob = options.tta ? tta_predict(predict, x, options.tta_config) : predict(x);
    if (prob.shape() != Shape{1, 1, s.height, s.width}) {
      throw ShapeError("prediction for '" + s.item_id + "' has shape " + shape_str(prob.shape()));
    }
    if (options.crf) prob = meanfield_refine(RgbImage::from_sample(s), prob, options.crf_params);

    std::vector<double> scores(prob.data().begin(), prob.data().end());
    std::vector<std::uint8_t> pred(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= options.threshold ? 1 : 0;
    const auto c = confusion(pred, s.mask);
    pooled += c;

    const bool defined = c.tp + c.fn > 0 && c.fp + c.tn > 0;
    const double auc = defined ? roc_auc(scores, s.mask) : std::nan("");
    report.auc_images += defined ? 1 : 0;
    report.images.push_back(ImageMetrics::from(s.item_id, c, auc));
    all_scores.insert(all_scores.end(), scores.begin(), scores.end());
    all_labels.insert(all_labels.end(), s.mask.begin(), s.mask.end());
  }

  const bool roc_defined = pooled.tp + pooled.fn > 0 && pooled.fp + pooled.tn > 0;
  if (roc_defined) report.roc = roc_curve(all_scores, all_labels);

  if (options.pooled) {
    report.aggregate = ImageMetrics::from("pooled", pooled, roc_defined ? report.roc.auc : std::nan(""));
  } else {
    ImageMetrics mean;
    mean.item_id = "mean";
    mean.counts = pooled;
    const double n = static_cast<double>(report.images.size());
    double auc_sum = 0;
    for (const auto& m : report.images) {
      mean.dsc += m.dsc / n;
      mean.iou += m.iou / n;
      mean.miou += m.miou / n;
      mean.precision += m.precision / n;
      mean.recall += m.recall / n;
      if (!std::isnan(m.auc)) auc_sum += m.auc;
    }
    mean.auc = report.auc_images > 0 ? auc_sum / static_cast<double>(report.auc_images) : std::nan("");
    report.aggregate = mean;
  }
  return report;
}

template <typename T>
MetricReport evaluate(ResUNetPP<T>& model, const std::vector<SegmentationSample>& samples,
                      const EvalOptions& options) {
  NoGradScope<T> no_grad;
  return evaluate<T>([&](const Tensor<T>& x) { return model.forward(x, Mode::Eval); }, samples, options);
}

std::vector<std::pair<std::string, EvalOptions>> report_variants(const EvalOptions& base) {
  std::vector<std::pair<std::string, EvalOptions>> out;
  for (auto [name, tta, crf] : {std::tuple{"base", false, false}, std::tuple{"crf", false, true},
                                std::tuple{"tta", true, false}, std::tuple{"tta_crf", true, true}}) {
    EvalOptions o = base;
    o.tta = tta;
    o.crf = crf;
    out.emplace_back(name, o);
  }
  return out;
}

template MetricReport evaluate(const Predictor<float>&, const std::vector<SegmentationSample>&, const EvalOptions&);
template MetricReport evaluate(const Predictor<double>&, const std::vector<SegmentationSample>&, const EvalOptions&);
template MetricReport evaluate(ResUNetPP<float>&, const std::vector<SegmentationSample>&, const EvalOptions&);
template MetricReport evaluate(ResUNetPP<double>&, const std::vector<SegmentationSample>&, const EvalOptions&);

}  // namespace resunetpp
