// resunetpp: train, eval, predict, refine, summary, synth.

#include <CLI11.hpp>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "resunetpp/io.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace resunetpp;
using namespace resunetpp::cli;

namespace {

// Flags that map onto config keys. Values are applied after the config file.
class Overrides {
 public:
  void option(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = values_.emplace_back();
    entries_.push_back({app->add_option(flag, slot, help), key, &slot, false});
  }
  void flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = values_.emplace_back("true");
    entries_.push_back({app->add_flag(flag, help), key, &slot, true});
  }
  void sets(CLI::App* app) {
    app->add_option("--set", generic_, "Override any config key: section.key=value (repeatable)");
  }

  // Applies every flag given on the command line; returns the keys touched.
  std::set<std::string> apply(RunConfig& cfg) const {
    std::set<std::string> touched;
    for (const auto& e : entries_) {
      if (e.opt->count() == 0) continue;
      cfg.set(e.key, *e.value);
      touched.insert(e.key);
    }
    for (const auto& kv : generic_) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      touched.insert(kv.substr(0, eq));
    }
    return touched;
  }

 private:
  struct Entry {
    CLI::Option* opt;
    std::string key;
    std::string* value;
    bool is_flag;
  };
  std::deque<std::string> values_;
  std::vector<Entry> entries_;
  std::vector<std::string> generic_;
};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class Artifacts {
 public:
  explicit Artifacts(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }
  fs::path path(const fs::path& rel) {
    expected_.push_back(dir_ / rel);
    if (expected_.back().has_parent_path()) fs::create_directories(expected_.back().parent_path());
    return expected_.back();
  }
  void text(const fs::path& rel, const std::string& content) {
    const auto p = path(rel);
    std::ofstream out(p, std::ios::binary);
    out << content;
    if (!out) throw FormatError("cannot write " + p.string());
  }
  // Exit status: 0 iff every recorded artifact exists.
  int finish() const {
    for (const auto& p : expected_) {
      if (!fs::exists(p)) {
        std::cerr << "error: artifact missing: " << p.string() << "\n";
        return 1;
      }
    }
    return 0;
  }

 private:
  fs::path dir_;
  std::vector<fs::path> expected_;
};

std::string config_fingerprint(RunConfig cfg) {
  cfg.out.clear();  // where results go does not change what they are
  return hex(fnv1a(cfg.to_text()));
}

std::vector<SegmentationSample> resized(const std::vector<SegmentationSample>& samples, Index size) {
  if (size == 0) return samples;
  std::vector<SegmentationSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(resize(s, size, size));
  return out;
}

// Replicates the last row / column until both sides are multiples of 8.
SegmentationSample pad_to_8(const SegmentationSample& s, Index& pad_h, Index& pad_w) {
  pad_h = (8 - s.height % 8) % 8;
  pad_w = (8 - s.width % 8) % 8;
  if (pad_h == 0 && pad_w == 0) return s;
  auto out = blank_sample(s.height + pad_h, s.width + pad_w);
  out.item_id = s.item_id;
  for (Index y = 0; y < out.height; ++y)
    for (Index x = 0; x < out.width; ++x) {
      const Index sy = std::min(y, s.height - 1), sx = std::min(x, s.width - 1);
      for (Index c = 0; c < 3; ++c) out.pixel(c, y, x) = s.pixel(c, sy, sx);
      out.label(y, x) = s.label(sy, sx);
    }
  return out;
}

// ---------------------------------------------------------------- commands

int cmd_train(const RunConfig& cfg) {
  if (cfg.train_dir.empty()) throw ConfigError("run.train_dir is required (--train-dir)");
  Artifacts art(cfg.out);
  const auto samples = load_dataset(cfg.train_dir);
  std::optional<SplitManifest> manifest;
  if (!cfg.manifest.empty()) manifest = SplitManifest::load(cfg.manifest);
  const auto data = prepare_data(samples, cfg.data_config(), manifest ? &*manifest : nullptr);
  std::cout << "train " << data.sets.train.size() << "  val " << data.sets.val.size() << "  test "
            << data.sets.test.size() << "\n";

  ResUNetPP<float> model(cfg.model, cfg.init_seed());
  TrainConfig tc = cfg.train;
  tc.seed = cfg.shuffle_seed();
  const auto result = train(model, data.sets.train, data.sets.val, tc, {.on_epoch = [](const EpochRecord& r) {
                              std::printf("epoch %4d  lr %.3g  train %.6f  val %.6f  (%.1fs)\n", r.epoch, r.lr,
                                          r.train_loss, r.val_loss, r.wall_time);
                              std::fflush(stdout);
                            }});
  std::cout << "best epoch " << result.best_epoch << "  val loss " << result.best_val_loss
            << (result.stopped_early ? "  (early stop)" : "") << "\n";

  save_weights(model, art.path("weights.bin"),
               {{"run.seed", std::to_string(cfg.seed)},
                {"data.image_size", std::to_string(cfg.image_size)},
                {"train.loss", to_string(cfg.train.loss)},
                {"train.best_epoch", std::to_string(result.best_epoch)},
                {"config.fingerprint", config_fingerprint(cfg)}});
  art.text("history.csv", history_csv(result.history));
  art.text("timing.csv", timing_csv(result.history));
  data.manifest.save(art.path("split_manifest.txt"));
  art.text("run_config.txt", cfg.to_text());
  return art.finish();
}

int cmd_eval(const RunConfig& cfg) {
  if (cfg.weights.empty()) throw ConfigError("run.weights is required (--weights)");
  if (cfg.test_dir.empty()) throw ConfigError("run.test_dir is required (--test-dir)");
  Artifacts art(cfg.out);
  auto model = load_weights<float>(cfg.weights);
  const auto meta = read_weight_metadata(cfg.weights);

  auto samples = load_dataset(cfg.test_dir);
  std::string protocol = "all images of test_dir";
  if (!cfg.manifest.empty()) {
    samples = apply_split(samples, SplitManifest::load(cfg.manifest)).test;
    protocol = "test split of " + cfg.manifest;
  }
  samples = resized(samples, cfg.image_size);
  Index max_pixels = 0;
  for (const auto& s : samples) max_pixels = std::max(max_pixels, s.height * s.width);

  EvalOptions base = cfg.eval_options();
  base.crf_params = cfg.crf_for(max_pixels);
  // Without --tta/--crf every variant is reported; otherwise base plus the
  // requested ones.
  const bool all = !cfg.use_tta && !cfg.use_crf;
  std::ostringstream summary;
  summary << "protocol: " << protocol << "\n";
  char line[200];
  std::snprintf(line, sizeof line, "%-8s %8s %8s %8s %9s %8s %8s %9s\n", "variant", "DSC", "mIoU", "Recall",
                "Precision", "AUC", "IoU", "dDSC");
  summary << line;
  double base_dsc = 0;
  for (const auto& [name, opts] : report_variants(base)) {
    if (!all && ((opts.tta && !cfg.use_tta) || (opts.crf && !cfg.use_crf))) continue;
    std::cout << "evaluating " << name << " on " << samples.size() << " images\n" << std::flush;
    auto report = evaluate(model, samples, opts);
    report.variant = name;
    report.provenance = {{"seed", std::to_string(cfg.seed)},
                         {"train_seed", meta.count("run.seed") ? meta.at("run.seed") : "unknown"},
                         {"weights_checksum", hex(fnv1a(read_file(cfg.weights)))},
                         {"test_dir", cfg.test_dir},
                         {"protocol", protocol},
                         {"image_size", std::to_string(cfg.image_size)},
                         {"tta_variants", opts.tta ? opts.tta_config.describe() : "none"},
                         {"crf_iterations", opts.crf ? std::to_string(opts.crf_params.iterations) : "none"},
                         {"config_fingerprint", config_fingerprint(cfg)}};
    art.text("report_" + name + ".csv", report.to_csv());
    art.text("report_" + name + ".txt", report.to_table());
    art.text("roc_" + name + ".csv", report.roc_csv());
    const auto& a = report.aggregate;
    if (name == "base") base_dsc = a.dsc;
    std::snprintf(line, sizeof line, "%-8s %8.4f %8.4f %8.4f %9.4f %8.4f %8.4f %+9.4f\n", name.c_str(), a.dsc,
                  a.miou, a.recall, a.precision, a.auc, a.iou, a.dsc - base_dsc);
    summary << line;
  }
  art.text("eval_summary.txt", summary.str());
  art.text("run_config.txt", cfg.to_text());
  std::cout << summary.str();
  return art.finish();
}

std::vector<double> to_doubles(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

// Resizes a single-channel map with the image resampler (bilinear).
std::vector<double> resize_map(const std::vector<double>& m, Index h, Index w, Index to_h, Index to_w) {
  if (h == to_h && w == to_w) return m;
  auto s = blank_sample(h, w);
  for (Index i = 0; i < h * w; ++i) s.image[static_cast<std::size_t>(i)] = static_cast<float>(m[i]);
  const auto r = resize(s, to_h, to_w);
  return {r.image.begin(), r.image.begin() + to_h * to_w};
}

std::vector<std::uint8_t> threshold_map(const std::vector<double>& p, double t) {
  std::vector<std::uint8_t> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] >= t ? 1 : 0;
  return out;
}

int cmd_predict(const RunConfig& cfg, const std::vector<std::string>& inputs) {
  if (cfg.weights.empty()) throw ConfigError("run.weights is required (--weights)");
  if (inputs.empty()) throw ConfigError("predict needs at least one image");
  Artifacts art(cfg.out);
  auto model = load_weights<float>(cfg.weights);
  std::string log = "stem,input_height,input_width,work_height,work_width,pad_bottom,pad_right,tta,crf\n";
  for (const auto& in : inputs) {
    const auto original = load_image(in);
    const auto work = cfg.image_size > 0 ? resize(original, cfg.image_size, cfg.image_size) : original;
    Index pad_h = 0, pad_w = 0;
    const auto padded = pad_to_8(work, pad_h, pad_w);
    const auto x = image_tensor<float>(padded);

    Tensor<float> prob;
    if (cfg.use_tta) {
      prob = tta_predict(model, x, cfg.tta);
    } else {
      NoGradScope<float> ng;
      prob = model.forward(x, Mode::Eval);
    }
    // Crop the padding away before the CRF so it sees only real pixels.
    Tensor<float> cropped(Shape{1, 1, work.height, work.width});
    for (Index y = 0; y < work.height; ++y)
      for (Index c = 0; c < work.width; ++c)
        cropped.data()[y * work.width + c] = prob.data()[y * padded.width + c];
    if (cfg.use_crf) {
      cropped = meanfield_refine(RgbImage::from_sample(work), cropped, cfg.crf_for(work.height * work.width));
    }
    const auto p = resize_map(to_doubles(cropped), work.height, work.width, original.height, original.width);
    const auto stem = fs::path(in).stem().string();
    write_probability_png(art.path(fs::path("prob") / (stem + ".png")), p, original.height, original.width);
    write_mask_png(art.path(fs::path("mask") / (stem + ".png")), threshold_map(p, cfg.threshold), original.height,
                   original.width);
    log += stem + "," + std::to_string(original.height) + "," + std::to_string(original.width) + "," +
           std::to_string(work.height) + "," + std::to_string(work.width) + "," + std::to_string(pad_h) + "," +
           std::to_string(pad_w) + "," + (cfg.use_tta ? "1" : "0") + "," + (cfg.use_crf ? "1" : "0") + "\n";
    std::cout << "predicted " << stem << "\n";
  }
  art.text("predictions.csv", log);
  art.text("run_config.txt", cfg.to_text());
  return art.finish();
}

int cmd_refine(const RunConfig& cfg, const std::string& image_path, const std::string& prob_path) {
  Artifacts art(cfg.out);
  const auto image = load_image(image_path);
  Index h = 0, w = 0;
  const auto p = read_probability_png(prob_path, h, w);
  if (h != image.height || w != image.width) {
    throw ShapeError("probability map is " + std::to_string(w) + "x" + std::to_string(h) + " but the image is " +
                     std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  const Tensor<double> prob(Shape{1, 1, h, w}, p);
  const auto q = meanfield_refine(RgbImage::from_sample(image), prob, cfg.crf_for(h * w));
  const auto stem = fs::path(image_path).stem().string();
  write_probability_png(art.path(fs::path("prob") / (stem + ".png")), q.to_vector(), h, w);
  write_mask_png(art.path(fs::path("mask") / (stem + ".png")), threshold_map(q.to_vector(), cfg.threshold), h, w);
  art.text("run_config.txt", cfg.to_text());
  return art.finish();
}

int cmd_summary(const RunConfig& cfg, bool write) {
  ResUNetPP<float> model(cfg.model, 0);
  const auto text = model.summary().to_text();
  std::cout << text;
  if (!write) return 0;
  Artifacts art(cfg.out);
  art.text("summary.txt", text);
  art.text("run_config.txt", cfg.to_text());
  return art.finish();
}

int cmd_synth(const RunConfig& cfg, std::size_t count, Index size) {
  BlobConfig bc;
  bc.size = size;
  const auto samples = make_blob_dataset(count, bc, cfg.seed);
  write_dataset(cfg.out, samples);
  Artifacts art(cfg.out);
  for (const auto& s : samples) {
    art.path(fs::path("images") / (s.item_id + ".png"));
    art.path(fs::path("masks") / (s.item_id + ".png"));
  }
  art.text("run_config.txt", cfg.to_text());
  std::cout << "wrote " << count << " image/mask pairs to " << cfg.out << "\n";
  return art.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ResUNet++ polyp segmentation: training, evaluation, inference, CRF refinement"};
  app.require_subcommand(1);
  std::string config_path;
  Overrides ov;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Config file ([section] key = value)")->check(CLI::ExistingFile);
    ov.option(sub, "--out", "run.out", "Output directory");
    ov.option(sub, "--seed", "run.seed", "Master seed");
    ov.sets(sub);
  };
  auto model_opts = [&](CLI::App* sub) {
    ov.option(sub, "--filters", "model.filters", "Five comma-separated filter counts");
  };
  auto infer_opts = [&](CLI::App* sub) {
    ov.option(sub, "--weights", "run.weights", "Weight file");
    ov.flag(sub, "--tta", "eval.tta", "Flip test-time augmentation");
    ov.flag(sub, "--crf", "eval.crf", "Dense CRF refinement");
    ov.option(sub, "--threshold", "eval.threshold", "Mask threshold on the probability");
    ov.option(sub, "--image-size", "data.image_size", "Square working size (0 keeps the input size)");
  };

  auto* train = app.add_subcommand("train", "Train a model; writes weights, history and the split manifest");
  common(train);
  model_opts(train);
  ov.option(train, "--train-dir", "run.train_dir", "Dataset root with images/ and masks/");
  ov.option(train, "--epochs", "train.epochs", "Maximum epochs");
  ov.option(train, "--lr", "train.lr", "Learning rate");
  ov.option(train, "--batch-size", "train.batch_size", "Batch size");
  ov.option(train, "--patience", "train.patience", "Early-stopping patience (epochs)");
  ov.flag(train, "--sgdr", "train.sgdr", "Cosine annealing with warm restarts");
  ov.option(train, "--loss", "train.loss", "bce or dice");
  ov.option(train, "--image-size", "data.image_size", "Square training size (0 keeps the input size)");
  ov.option(train, "--manifest", "run.manifest", "Reuse an existing split manifest");
  ov.option(train, "--augment", "data.augmentations", "Comma list of augmentations, 'all' or 'none'");
  ov.option(train, "--augment-copies", "data.augment_copies", "Augmented copies per training image");

  auto* eval = app.add_subcommand("eval", "Evaluate base/+CRF/+TTA/+TTA+CRF and write one report per variant");
  common(eval);
  infer_opts(eval);
  ov.option(eval, "--test-dir", "run.test_dir", "Dataset root to evaluate on");
  ov.option(eval, "--manifest", "run.manifest", "Evaluate only the test split of this manifest");
  ov.flag(eval, "--pooled", "eval.pooled", "Pool pixels instead of averaging per image");

  auto* predict = app.add_subcommand("predict", "Write probability maps (16-bit) and masks (8-bit)");
  common(predict);
  infer_opts(predict);
  std::vector<std::string> inputs;
  predict->add_option("images", inputs, "Input images")->check(CLI::ExistingFile);

  auto* refine = app.add_subcommand("refine", "CRF-refine a stored probability map");
  common(refine);
  ov.option(refine, "--threshold", "eval.threshold", "Mask threshold");
  std::string refine_image, refine_prob;
  refine->add_option("--image", refine_image, "RGB image")->required()->check(CLI::ExistingFile);
  refine->add_option("--prob", refine_prob, "Probability PNG (8 or 16 bit)")->required()->check(CLI::ExistingFile);

  auto* summary = app.add_subcommand("summary", "Per-block parameter table, total and reference delta");
  common(summary);
  model_opts(summary);

  auto* synth = app.add_subcommand("synth", "Write a synthetic blob dataset (images/ and masks/)");
  common(synth);
  std::size_t synth_count = 20;
  Index synth_size = 64;
  synth->add_option("--count", synth_count, "Number of image/mask pairs");
  synth->add_option("--size", synth_size, "Side length in pixels");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    const auto touched = ov.apply(cfg);
    CLI::App* sub = app.get_subcommands().front();
    cfg.command = sub->get_name();

    // Evaluation and inference default to the training resolution stored in
    // the weights unless a size was given explicitly.
    if ((sub == eval || sub == predict) && !cfg.weights.empty() && !touched.count("data.image_size")) {
      bool in_file = false;
      if (!config_path.empty()) in_file = parse_config_text(read_file(config_path)).count("data.image_size") > 0;
      const auto meta = read_weight_metadata(cfg.weights);
      if (!in_file && meta.count("data.image_size")) cfg.set("data.image_size", meta.at("data.image_size"));
    }
    cfg.validate();

    if (sub == train) return cmd_train(cfg);
    if (sub == eval) return cmd_eval(cfg);
    if (sub == predict) return cmd_predict(cfg, inputs);
    if (sub == refine) return cmd_refine(cfg, refine_image, refine_prob);
    if (sub == summary) return cmd_summary(cfg, touched.count("run.out") > 0);
    if (sub == synth) return cmd_synth(cfg, synth_count, synth_size);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
