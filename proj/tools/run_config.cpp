#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "resunetpp/random.hpp"

namespace resunetpp::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(key, v, "a number");
  return out;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(key, v, "an integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad(key, v, "true or false");
}

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename Seq, typename F>
std::string join(const Seq& seq, F&& f) {
  std::string out;
  for (const auto& x : seq) out += (out.empty() ? "" : ",") + f(x);
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line, section;
  for (int n = 1; std::getline(ss, line); ++n) {
    const auto hash = line.find_first_of("#;");
    line = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(n) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
    if (section.empty()) throw ConfigError("config line " + std::to_string(n) + ": key outside a [section]");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    out[section + "." + key] = trim(line.substr(eq + 1));
  }
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& v = value;
  auto ints = [&] {
    std::vector<Index> out;
    for (const auto& s : split_list(v)) out.push_back(to_int(key, s));
    return out;
  };

  if (key == "run.seed") seed = to_u64(key, v);
  else if (key == "run.train_dir") train_dir = v;
  else if (key == "run.test_dir") test_dir = v;
  else if (key == "run.weights") weights = v;
  else if (key == "run.out") out = v;
  else if (key == "run.manifest") manifest = v;

  else if (key == "model.filters") model.filters = ints();
  else if (key == "model.se_reduction") model.se_reduction = static_cast<int>(to_int(key, v));
  else if (key == "model.aspp_rates") {
    model.aspp_rates.clear();
    for (auto r : ints()) model.aspp_rates.push_back(static_cast<int>(r));
  } else if (key == "model.skip_before_se") model.skip_before_se = to_bool(key, v);

  else if (key == "data.image_size") image_size = to_int(key, v);
  else if (key == "data.ratios") {
    const auto parts = split_list(v);
    if (parts.size() != 3) bad(key, v, "three comma-separated ratios");
    ratios = {to_double(key, parts[0]), to_double(key, parts[1]), to_double(key, parts[2])};
  } else if (key == "data.augmentations") {
    augmentations.clear();
    if (v == "all") augmentations = all_augment_kinds();
    else if (v != "none" && !v.empty())
      for (const auto& s : split_list(v)) augmentations.push_back(parse_augment_kind(s));
  } else if (key == "data.augment_probability") augment_probability = to_double(key, v);
  else if (key == "data.augment_copies") augment_copies = static_cast<int>(to_int(key, v));

  else if (key == "train.epochs") train.epochs = static_cast<int>(to_int(key, v));
  else if (key == "train.lr") train.lr = to_double(key, v);
  else if (key == "train.batch_size") train.batch_size = to_int(key, v);
  else if (key == "train.patience") train.early_stop_patience = static_cast<int>(to_int(key, v));
  else if (key == "train.loss") train.loss = parse_loss_kind(v);
  else if (key == "train.sgdr") {
    if (to_bool(key, v)) {
      if (!train.sgdr) train.sgdr = SgdrConfig{};
    } else {
      train.sgdr.reset();
    }
  } else if (key == "train.sgdr_t0" || key == "train.sgdr_t_mult" || key == "train.sgdr_lr_min") {
    if (!train.sgdr) train.sgdr = SgdrConfig{};
    if (key == "train.sgdr_t0") train.sgdr->t0 = static_cast<int>(to_int(key, v));
    else if (key == "train.sgdr_t_mult") train.sgdr->t_mult = static_cast<int>(to_int(key, v));
    else train.sgdr->lr_min = to_double(key, v);
  } else if (key == "train.beta1") train.nadam.beta1 = to_double(key, v);
  else if (key == "train.beta2") train.nadam.beta2 = to_double(key, v);
  else if (key == "train.epsilon") train.nadam.epsilon = to_double(key, v);

  else if (key == "crf.iterations") crf.iterations = static_cast<int>(to_int(key, v));
  else if (key == "crf.w_smooth") crf.w_smooth = to_double(key, v);
  else if (key == "crf.w_bilateral") crf.w_bilateral = to_double(key, v);
  else if (key == "crf.theta_gamma") crf.theta_gamma = to_double(key, v);
  else if (key == "crf.theta_alpha") crf.theta_alpha = to_double(key, v);
  else if (key == "crf.theta_beta") crf.theta_beta = to_double(key, v);
  else if (key == "crf.max_exact_pixels") crf.max_exact_pixels = to_int(key, v);
  else if (key == "crf.window_radius") crf.window_radius = to_int(key, v);
  else if (key == "crf.truncate") {
    if (v == "auto") crf_truncate = CrfTruncate::Auto;
    else crf_truncate = to_bool(key, v) ? CrfTruncate::On : CrfTruncate::Off;
  }

  else if (key == "tta.variants") {
    tta.variants.clear();
    for (const auto& s : split_list(v)) tta.variants.push_back(parse_tta_variant(s));
  }

  else if (key == "eval.threshold") threshold = to_double(key, v);
  else if (key == "eval.pooled") pooled = to_bool(key, v);
  else if (key == "eval.tta") use_tta = to_bool(key, v);
  else if (key == "eval.crf") use_crf = to_bool(key, v);

  else throw ConfigError("unknown config key '" + key + "'");
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "# resolved configuration\n";
  os << "# command: " << command << "\n";
  os << "\n[run]\n";
  os << "seed = " << seed << "\n";
  os << "train_dir = " << train_dir << "\n";
  os << "test_dir = " << test_dir << "\n";
  os << "weights = " << weights << "\n";
  os << "out = " << out << "\n";
  os << "manifest = " << manifest << "\n";

  os << "\n[model]\n";
  os << "filters = " << join(model.filters, [](Index f) { return std::to_string(f); }) << "\n";
  os << "se_reduction = " << model.se_reduction << "\n";
  os << "aspp_rates = " << join(model.aspp_rates, [](int r) { return std::to_string(r); }) << "\n";
  os << "skip_before_se = " << (model.skip_before_se ? "true" : "false") << "\n";

  os << "\n[data]\n";
  os << "image_size = " << image_size << "\n";
  os << "ratios = " << num(ratios.train) << "," << num(ratios.val) << "," << num(ratios.test) << "\n";
  os << "augmentations = "
     << (augmentations.empty() ? "none" : join(augmentations, [](AugmentKind k) { return to_string(k); })) << "\n";
  os << "augment_probability = " << num(augment_probability) << "\n";
  os << "augment_copies = " << augment_copies << "\n";

  os << "\n[train]\n";
  os << "epochs = " << train.epochs << "\n";
  os << "lr = " << num(train.lr) << "\n";
  os << "batch_size = " << train.batch_size << "\n";
  os << "patience = " << train.early_stop_patience << "\n";
  os << "loss = " << to_string(train.loss) << "\n";
  os << "sgdr = " << (train.sgdr ? "true" : "false") << "\n";
  if (train.sgdr) {
    os << "sgdr_t0 = " << train.sgdr->t0 << "\n";
    os << "sgdr_t_mult = " << train.sgdr->t_mult << "\n";
    os << "sgdr_lr_min = " << num(train.sgdr->lr_min) << "\n";
  }
  os << "beta1 = " << num(train.nadam.beta1) << "\n";
  os << "beta2 = " << num(train.nadam.beta2) << "\n";
  os << "epsilon = " << num(train.nadam.epsilon) << "\n";

  os << "\n[crf]\n";
  os << "iterations = " << crf.iterations << "\n";
  os << "w_smooth = " << num(crf.w_smooth) << "\n";
  os << "w_bilateral = " << num(crf.w_bilateral) << "\n";
  os << "theta_gamma = " << num(crf.theta_gamma) << "\n";
  os << "theta_alpha = " << num(crf.theta_alpha) << "\n";
  os << "theta_beta = " << num(crf.theta_beta) << "\n";
  os << "max_exact_pixels = " << crf.max_exact_pixels << "\n";
  os << "truncate = "
     << (crf_truncate == CrfTruncate::Auto ? "auto" : crf_truncate == CrfTruncate::On ? "true" : "false") << "\n";
  os << "window_radius = " << crf.window_radius << "\n";

  os << "\n[tta]\n";
  os << "variants = " << join(tta.variants, [](TtaVariant v) { return to_string(v); }) << "\n";

  os << "\n[eval]\n";
  os << "threshold = " << num(threshold) << "\n";
  os << "pooled = " << (pooled ? "true" : "false") << "\n";
  os << "tta = " << (use_tta ? "true" : "false") << "\n";
  os << "crf = " << (use_crf ? "true" : "false") << "\n";
  return os.str();
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  crf.validate();
  tta.validate();
  if (image_size < 0 || image_size % 8 != 0) throw ConfigError("data.image_size must be 0 or a multiple of 8");
  if (augment_copies < 0) throw ConfigError("data.augment_copies must be >= 0");
  if (augment_probability < 0 || augment_probability > 1) {
    throw ConfigError("data.augment_probability must lie in [0, 1]");
  }
  if (ratios.train <= 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1) > 1e-9) {
    throw ConfigError("data.ratios must be non-negative and sum to 1");
  }
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("eval.threshold must lie in (0, 1)");
}

std::uint64_t RunConfig::init_seed() const { return mix_seed(seed, 1); }
std::uint64_t RunConfig::shuffle_seed() const { return mix_seed(seed, 2); }
std::uint64_t RunConfig::augment_seed() const { return mix_seed(seed, 3); }

EvalOptions RunConfig::eval_options() const {
  EvalOptions o;
  o.threshold = threshold;
  o.tta = use_tta;
  o.tta_config = tta;
  o.crf = use_crf;
  o.crf_params = crf;
  o.pooled = pooled;
  return o;
}

DataConfig RunConfig::data_config() const {
  DataConfig d;
  d.image_size = image_size;
  d.split_seed = split_seed();
  d.ratios = ratios;
  for (auto k : augmentations) d.augmentations.push_back(default_op(k, augment_probability));
  d.augment_copies = augmentations.empty() ? 0 : augment_copies;
  d.augment_seed = augment_seed();
  return d;
}

CrfParams RunConfig::crf_for(Index pixels) const {
  CrfParams p = crf;
  p.truncate = crf_truncate == CrfTruncate::On || (crf_truncate == CrfTruncate::Auto && pixels > crf.max_exact_pixels);
  return p;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  for (const auto& [k, v] : parse_config_text(ss.str())) cfg.set(k, v);
  return cfg;
}

}  // namespace resunetpp::cli
