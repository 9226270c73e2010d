#include "resunetpp/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace resunetpp {

static_assert(std::endian::native == std::endian::little, "weight container I/O assumes a little-endian host");

void ModelConfig::validate() const {
  if (filters.size() != 5) {
    throw ConfigError("filters must list exactly 5 widths, got " + std::to_string(filters.size()));
  }
  for (Index f : filters) {
    if (f < 1) throw ConfigError("filter widths must be positive");
  }
  if (input_channels < 1 || output_channels < 1) throw ConfigError("channel counts must be positive");
  if (aspp_rates.empty()) throw ConfigError("aspp_rates is empty");
}

namespace {

const ModelConfig& validated(const ModelConfig& c) {
  c.validate();
  return c;
}

BlockSpec stem_spec(const ModelConfig& c) {
  return {.kind = BlockKind::Stem, .in_channels = c.input_channels, .out_channels = c.filters[0]};
}

BlockSpec residual_spec(Index in, Index out, int stride) {
  return {.kind = BlockKind::Residual, .in_channels = in, .out_channels = out, .stride = stride};
}

BlockSpec se_spec(const ModelConfig& c, Index ch) {
  return {.kind = BlockKind::SqueezeExcite, .in_channels = ch, .out_channels = ch, .se_reduction = c.se_reduction};
}

BlockSpec aspp_spec(const ModelConfig& c, Index in, Index out) {
  return {.kind = BlockKind::Aspp, .in_channels = in, .out_channels = out, .dilation_rates = c.aspp_rates};
}

BlockSpec attention_spec(Index skip, Index dec) {
  return {.kind = BlockKind::Attention, .in_channels = skip, .out_channels = dec};
}

// Channel plan shared by the constructor, graph() and summary().
std::vector<GraphNode> plan(const ModelConfig& c) {
  const auto& f = c.filters;
  std::vector<GraphNode> g;
  g.push_back({"stem", stem_spec(c)});
  for (int i = 0; i < 3; ++i) {
    g.push_back({"encoder" + std::to_string(i + 1), residual_spec(f[i], f[i + 1], 2)});
    g.push_back({"se" + std::to_string(i + 1), se_spec(c, f[i + 1])});
  }
  g.push_back({"bridge", aspp_spec(c, f[3], f[4])});
  Index dec = f[4];
  for (int i = 0; i < 3; ++i) {
    const Index skip = f[2 - i];
    g.push_back({"attention" + std::to_string(i + 1), attention_spec(skip, dec)});
    g.push_back({"decoder" + std::to_string(i + 1), residual_spec(dec + skip, f[3 - i], 1)});
    dec = f[3 - i];
  }
  g.push_back({"head", aspp_spec(c, f[1], f[0])});
  return g;
}

const BlockSpec& node_spec(const std::vector<GraphNode>& nodes, const std::string& name) {
  for (const auto& n : nodes) {
    if (n.name == name) return n.spec;
  }
  throw ConfigError("model graph has no block named " + name);
}

template <typename Block>
std::vector<Block> make_blocks(const std::vector<GraphNode>& nodes, const std::string& stem, Initializer& init) {
  std::vector<Block> out;
  for (int i = 1; i <= 3; ++i) out.emplace_back(node_spec(nodes, stem + std::to_string(i)), init);
  return out;
}

}  // namespace

template <typename T>
ResUNetPP<T>::ResUNetPP(ModelConfig config, std::uint64_t seed)
    : ResUNetPP(validated(config), plan(config), Initializer(seed)) {}

// Parameters are drawn from one stream in member order, so values depend only
// on (config, seed).
template <typename T>
ResUNetPP<T>::ResUNetPP(const ModelConfig& config, const std::vector<GraphNode>& nodes, Initializer&& init)
    : config_(config),
      stem_(node_spec(nodes, "stem"), init),
      encoders_(make_blocks<ResidualBlock<T>>(nodes, "encoder", init)),
      se_(make_blocks<SqueezeExciteBlock<T>>(nodes, "se", init)),
      bridge_(node_spec(nodes, "bridge"), init),
      attention_(make_blocks<AttentionBlock<T>>(nodes, "attention", init)),
      decoders_(make_blocks<ResidualBlock<T>>(nodes, "decoder", init)),
      head_(node_spec(nodes, "head"), init),
      output_(config.filters[0], config.output_channels, 1, init) {}

template <typename T>
Tensor<T> ResUNetPP<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != config_.input_channels) {
    throw ShapeError("model expects [N, " + std::to_string(config_.input_channels) + ", H, W] input, got " +
                     shape_str(x.shape()));
  }
  if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0) {
    throw ShapeError("input spatial size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                     " is not divisible by 8; pad the input");
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> e = stem_(x, mode);
  skips.push_back(e);
  for (int i = 0; i < 3; ++i) {
    Tensor<T> r = encoders_[i](e, mode);
    Tensor<T> g = se_[i](r, mode);
    skips.push_back(config_.skip_before_se ? r : g);
    e = g;
  }
  Tensor<T> d = bridge_(e, mode);
  for (int i = 0; i < 3; ++i) {
    const Tensor<T>& skip = skips[2 - i];
    Tensor<T> up = nearest_upsample(d, 2);
    Tensor<T> gated = attention_[i](skip, up, mode);
    d = decoders_[i](concat(gated, skip), mode);
  }
  return sigmoid(output_(head_(d, mode)));
}

template <typename T>
std::vector<GraphNode> ResUNetPP<T>::graph() const {
  return plan(config_);
}

template <typename T>
ParameterSet<T> ResUNetPP<T>::parameters() {
  ParameterSet<T> p;
  stem_.collect("stem", p);
  for (int i = 0; i < 3; ++i) {
    encoders_[i].collect("encoder" + std::to_string(i + 1), p);
    se_[i].collect("se" + std::to_string(i + 1), p);
  }
  bridge_.collect("bridge", p);
  for (int i = 0; i < 3; ++i) {
    attention_[i].collect("attention" + std::to_string(i + 1), p);
    decoders_[i].collect("decoder" + std::to_string(i + 1), p);
  }
  head_.collect("head", p);
  output_.collect("output", p);
  return p;
}

template <typename T>
Index ResUNetPP<T>::count_parameters() {
  return parameters().count();
}

template <typename T>
ModelSummary ResUNetPP<T>::summary() {
  ModelSummary s;
  const auto nodes = plan(config_);
  auto add_row = [&](const GraphNode& node, auto& block) {
    ParameterSet<T> p;
    block.collect(node.name, p);
    s.blocks.push_back({node.name, to_string(node.spec.kind),
                        std::to_string(node.spec.in_channels) + "->" + std::to_string(node.spec.out_channels),
                        p.count()});
  };
  std::size_t k = 0;
  add_row(nodes[k++], stem_);
  for (int i = 0; i < 3; ++i) {
    add_row(nodes[k++], encoders_[i]);
    add_row(nodes[k++], se_[i]);
  }
  add_row(nodes[k++], bridge_);
  for (int i = 0; i < 3; ++i) {
    add_row(nodes[k++], attention_[i]);
    add_row(nodes[k++], decoders_[i]);
  }
  add_row(nodes[k++], head_);
  ParameterSet<T> out;
  output_.collect("output", out);
  s.blocks.push_back({"output", "conv1x1",
                      std::to_string(config_.filters[0]) + "->" + std::to_string(config_.output_channels),
                      out.count()});
  for (const auto& b : s.blocks) s.total += b.parameters;
  s.delta_vs_reference = s.total - kReferenceParameterCount;
  return s;
}

std::string ModelSummary::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(12) << "block" << std::setw(11) << "kind" << std::setw(12) << "channels"
     << std::right << std::setw(12) << "params" << '\n';
  for (const auto& b : blocks) {
    os << std::left << std::setw(12) << b.name << std::setw(11) << b.kind << std::setw(12) << b.shape << std::right
       << std::setw(12) << b.parameters << '\n';
  }
  os << "total_parameters " << total << '\n';
  os << "reference_parameters " << kReferenceParameterCount << '\n';
  os << "delta_vs_reference " << (delta_vs_reference >= 0 ? "+" : "") << delta_vs_reference << '\n';
  return os.str();
}

template <typename T>
ResUNetPP<T> build_resunetpp(const std::vector<Index>& filters, std::uint64_t seed) {
  ModelConfig c;
  c.filters = filters;
  return ResUNetPP<T>(c, seed);
}

// ---------------------------------------------------------------------------
// serialization

namespace {

constexpr char kMagic[8] = {'R', 'U', 'P', 'P', 'W', 'T', '0', '1'};

template <typename T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {}
  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    std::memcpy(&v, take(8), 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > buf_.size() - pos_) throw FormatError("weight file is truncated or corrupt");
    const auto* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::string name;
  std::uint8_t dtype = 0;
  Shape shape;
  const std::uint8_t* bytes = nullptr;
};

struct ParsedFile {
  Metadata meta;
  std::vector<Entry> entries;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open weight file " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

ParsedFile parse(Reader& r) {
  ParsedFile f;
  if (std::memcmp(r.take(8), kMagic, 8) != 0) throw FormatError("not a weight file (bad magic)");
  const std::uint32_t nmeta = r.u32();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    f.meta[k] = r.str();
  }
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    Entry e;
    e.name = r.str();
    e.dtype = r.u8();
    if (e.dtype > 1) throw FormatError("weight file entry " + e.name + " has unknown dtype");
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("weight file entry " + e.name + " has implausible rank");
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t v = r.u64();
      if (v == 0 || v > (1ull << 40)) throw FormatError("weight file entry " + e.name + " has a bad dimension");
      e.shape.push_back(static_cast<Index>(v));
    }
    f.entries.push_back(std::move(e));
  }
  std::uint64_t h = 1469598103934665603ull;
  for (auto& e : f.entries) {
    const std::size_t bytes = static_cast<std::size_t>(shape_numel(e.shape)) * (e.dtype == 0 ? 4 : 8);
    e.bytes = r.take(bytes);
    h = fnv1a(e.bytes, bytes, h);
  }
  if (r.u64() != h) throw FormatError("weight file checksum mismatch (corrupt data)");
  if (r.remaining() != 0) throw FormatError("weight file has trailing bytes");
  return f;
}

template <typename T>
void put_tensor(Writer& header, std::vector<std::pair<const void*, std::size_t>>& blobs, const std::string& name,
                const Shape& shape, const T* data) {
  header.str(name);
  header.u8(dtype_code<T>());
  header.u32(static_cast<std::uint32_t>(shape.size()));
  for (Index d : shape) header.u64(static_cast<std::uint64_t>(d));
  blobs.emplace_back(data, static_cast<std::size_t>(shape_numel(shape)) * sizeof(T));
}

std::string join(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<Index> split_ints(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoll(tok));
    } catch (const std::exception&) {
      throw FormatError("bad integer list '" + s + "'");
    }
  }
  return out;
}

}  // namespace

void encode_config(const ModelConfig& c, Metadata& out) {
  out["model.filters"] = join(c.filters);
  out["model.input_channels"] = std::to_string(c.input_channels);
  out["model.output_channels"] = std::to_string(c.output_channels);
  out["model.se_reduction"] = std::to_string(c.se_reduction);
  out["model.aspp_rates"] = join(std::vector<Index>(c.aspp_rates.begin(), c.aspp_rates.end()));
  out["model.skip_before_se"] = c.skip_before_se ? "1" : "0";
}

ModelConfig decode_config(const Metadata& meta) {
  auto get = [&](const std::string& k) {
    auto it = meta.find(k);
    if (it == meta.end()) throw FormatError("weight file metadata lacks " + k);
    return it->second;
  };
  ModelConfig c;
  c.filters = split_ints(get("model.filters"));
  c.input_channels = split_ints(get("model.input_channels")).at(0);
  c.output_channels = split_ints(get("model.output_channels")).at(0);
  c.se_reduction = static_cast<int>(split_ints(get("model.se_reduction")).at(0));
  c.aspp_rates.clear();
  for (Index r : split_ints(get("model.aspp_rates"))) c.aspp_rates.push_back(static_cast<int>(r));
  c.skip_before_se = get("model.skip_before_se") == "1";
  return c;
}

template <typename T>
void save_weights(ResUNetPP<T>& model, const std::filesystem::path& path, const Metadata& extra) {
  Metadata meta = extra;
  encode_config(model.config(), meta);
  meta["dtype"] = std::is_same_v<T, float> ? "f32" : "f64";

  auto params = model.parameters();
  // Statistics are converted to T-typed buffers so every entry has the model dtype.
  std::vector<std::vector<T>> stat_buffers;
  Writer header;
  header.raw(kMagic, 8);
  header.u32(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    header.str(k);
    header.str(v);
  }
  header.u32(static_cast<std::uint32_t>(params.trainable.size() + 3 * params.running.size()));
  std::vector<std::pair<const void*, std::size_t>> blobs;
  for (const auto& p : params.trainable) {
    put_tensor<T>(header, blobs, p.name, p.tensor.shape(), p.tensor.data().data());
  }
  stat_buffers.reserve(params.running.size());
  for (const auto& r : params.running) {
    const Shape s{static_cast<Index>(r.stats->mean.size())};
    put_tensor<T>(header, blobs, r.name + ".running_mean", s, r.stats->mean.data());
    put_tensor<T>(header, blobs, r.name + ".running_var", s, r.stats->var.data());
    stat_buffers.push_back({static_cast<T>(r.stats->batches_tracked)});
    put_tensor<T>(header, blobs, r.name + ".batches_tracked", Shape{1}, stat_buffers.back().data());
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write weight file " + path.string());
  out.write(reinterpret_cast<const char*>(header.bytes().data()), static_cast<std::streamsize>(header.bytes().size()));
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [p, n] : blobs) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    h = fnv1a(static_cast<const std::uint8_t*>(p), n, h);
  }
  out.write(reinterpret_cast<const char*>(&h), 8);
  if (!out) throw FormatError("failed writing weight file " + path.string());
}

template <typename T>
void load_weights_into(ResUNetPP<T>& model, const std::filesystem::path& path) {
  Reader r(read_file(path));
  const ParsedFile f = parse(r);

  std::map<std::string, const Entry*> by_name;
  for (const auto& e : f.entries) by_name[e.name] = &e;

  auto lookup = [&](const std::string& name, const Shape& shape) -> const T* {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ShapeError("weight file has no tensor '" + name + "' required by the model");
    const Entry& e = *it->second;
    if (e.shape != shape) {
      throw ShapeError("shape mismatch for tensor '" + name + "': file " + shape_str(e.shape) + ", model " +
                       shape_str(shape));
    }
    if (e.dtype != dtype_code<T>()) throw FormatError("dtype mismatch for tensor '" + name + "'");
    return reinterpret_cast<const T*>(e.bytes);
  };

  auto params = model.parameters();
  std::size_t expected = params.trainable.size() + 3 * params.running.size();
  if (expected != f.entries.size()) {
    for (const auto& e : f.entries) {
      bool known = false;
      for (const auto& p : params.trainable) known = known || p.name == e.name;
      for (const auto& s : params.running) {
        known = known || e.name == s.name + ".running_mean" || e.name == s.name + ".running_var" ||
                e.name == s.name + ".batches_tracked";
      }
      if (!known) throw ShapeError("weight file tensor '" + e.name + "' does not exist in the model");
    }
  }

  // Validate everything before touching the model.
  std::vector<std::pair<std::span<T>, const T*>> copies;
  for (auto& p : params.trainable) copies.emplace_back(p.tensor.data(), lookup(p.name, p.tensor.shape()));
  struct StatCopy {
    BatchNormStats<T>* stats;
    const T* mean;
    const T* var;
    const T* tracked;
  };
  std::vector<StatCopy> stat_copies;
  for (auto& s : params.running) {
    const Shape shape{static_cast<Index>(s.stats->mean.size())};
    stat_copies.push_back({s.stats, lookup(s.name + ".running_mean", shape), lookup(s.name + ".running_var", shape),
                           lookup(s.name + ".batches_tracked", Shape{1})});
  }
  for (auto& [dst, src] : copies) std::memcpy(dst.data(), src, dst.size() * sizeof(T));
  for (auto& c : stat_copies) {
    std::memcpy(c.stats->mean.data(), c.mean, c.stats->mean.size() * sizeof(T));
    std::memcpy(c.stats->var.data(), c.var, c.stats->var.size() * sizeof(T));
    c.stats->batches_tracked = static_cast<std::int64_t>(*c.tracked);
  }
}

Metadata read_weight_metadata(const std::filesystem::path& path) {
  Reader r(read_file(path));
  return parse(r).meta;
}

template <typename T>
ResUNetPP<T> load_weights(const std::filesystem::path& path) {
  ResUNetPP<T> model(decode_config(read_weight_metadata(path)), 0);
  load_weights_into(model, path);
  return model;
}

template class ResUNetPP<float>;
template class ResUNetPP<double>;
template ResUNetPP<float> build_resunetpp<float>(const std::vector<Index>&, std::uint64_t);
template ResUNetPP<double> build_resunetpp<double>(const std::vector<Index>&, std::uint64_t);
template void save_weights(ResUNetPP<float>&, const std::filesystem::path&, const Metadata&);
template void save_weights(ResUNetPP<double>&, const std::filesystem::path&, const Metadata&);
template void load_weights_into(ResUNetPP<float>&, const std::filesystem::path&);
template void load_weights_into(ResUNetPP<double>&, const std::filesystem::path&);
template ResUNetPP<float> load_weights<float>(const std::filesystem::path&);
template ResUNetPP<double> load_weights<double>(const std::filesystem::path&);

}  // namespace resunetpp
