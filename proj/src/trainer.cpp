#include "resunetpp/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "resunetpp/random.hpp"

namespace resunetpp {

std::string to_string(LossKind kind) { return kind == LossKind::Bce ? "bce" : "dice"; }

LossKind parse_loss_kind(const std::string& name) {
  if (name == "bce") return LossKind::Bce;
  if (name == "dice") return LossKind::Dice;
  throw ConfigError("loss: expected 'bce' or 'dice', got '" + name + "'");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
  if (nadam.beta1 < 0 || nadam.beta1 >= 1) throw ConfigError("nadam.beta1 must lie in [0, 1)");
  if (nadam.beta2 < 0 || nadam.beta2 >= 1) throw ConfigError("nadam.beta2 must lie in [0, 1)");
  if (!(nadam.epsilon > 0)) throw ConfigError("nadam.epsilon must be > 0");
  if (sgdr) {
    if (sgdr->t0 < 1) throw ConfigError("sgdr.t0 must be >= 1");
    if (sgdr->t_mult < 1) throw ConfigError("sgdr.t_mult must be >= 1");
    if (sgdr->lr_min < 0 || sgdr->lr_min > lr) throw ConfigError("sgdr.lr_min must lie in [0, lr]");
  }
}

template <typename T>
void nadam_step(std::vector<NamedTensor<T>>& params, OptimizerState& state, double lr) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
      state.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (state.m[i].size() != static_cast<std::size_t>(p.tensor.numel())) {
      throw ShapeError("optimizer moments do not match parameter '" + p.name + "'");
    }
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }

  const auto& o = state.options;
  const std::int64_t t = ++state.step;
  const double c1 = 1 - std::pow(o.beta1, static_cast<double>(t));
  const double c2 = 1 - std::pow(o.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].tensor.data();
    auto grad = params[i].tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = grad[k];
      m[k] = o.beta1 * m[k] + (1 - o.beta1) * g;
      v[k] = o.beta2 * v[k] + (1 - o.beta2) * g * g;
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      const double m_bar = o.beta1 * m_hat + (1 - o.beta1) * g / c1;
      theta[k] = static_cast<T>(theta[k] - lr * m_bar / (std::sqrt(v_hat) + o.epsilon));
    }
  }
}

double sgdr_lr(int epoch, double lr, const SgdrConfig& sgdr) {
  long long cycle = sgdr.t0, pos = epoch;
  while (pos >= cycle) {
    pos -= cycle;
    cycle *= sgdr.t_mult;
  }
  const double frac = static_cast<double>(pos) / static_cast<double>(cycle);
  return sgdr.lr_min + 0.5 * (lr - sgdr.lr_min) * (1 + std::cos(3.14159265358979323846 * frac));
}

double epoch_lr(int epoch, const TrainConfig& config) {
  return config.sgdr ? sgdr_lr(epoch, config.lr, *config.sgdr) : config.lr;
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("early_stop_patience must be >= 1");
}

bool EarlyStopping::update(double val_loss) {
  ++epoch_;
  if (best_epoch_ == 0 || val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

template <typename T>
ModelSnapshot<T> ModelSnapshot<T>::capture(ResUNetPP<T>& model) {
  ModelSnapshot s;
  auto p = model.parameters();
  for (const auto& t : p.trainable) s.tensors.push_back(t.tensor.to_vector());
  for (const auto& r : p.running) s.stats.push_back(*r.stats);
  return s;
}

template <typename T>
void ModelSnapshot<T>::restore(ResUNetPP<T>& model) const {
  auto p = model.parameters();
  if (p.trainable.size() != tensors.size() || p.running.size() != stats.size()) {
    throw ShapeError("snapshot does not match the model topology");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    std::copy(tensors[i].begin(), tensors[i].end(), p.trainable[i].tensor.data().begin());
  }
  for (std::size_t i = 0; i < stats.size(); ++i) *p.running[i].stats = stats[i];
}

template <typename T>
Tensor<T> compute_loss(const Tensor<T>& pred, const Tensor<T>& target, LossKind kind) {
  return kind == LossKind::Bce ? bce_loss(pred, target) : dice_loss(pred, target);
}

template <typename T>
double train_step(ResUNetPP<T>& model, std::vector<NamedTensor<T>>& params, OptimizerState& state,
                  const Batch<T>& batch, LossKind loss, double lr) {
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  Tape<T> tape;
  Tensor<T> l;
  {
    TapeScope<T> scope(tape);
    l = compute_loss(model.forward(batch.images, Mode::Train), batch.masks, loss);
  }
  const double value = static_cast<double>(l.item());
  if (!std::isfinite(value)) throw NumericError("training loss became non-finite");
  backward(l, tape);
  nadam_step(params, state, lr);
  return value;
}

template <typename T>
double evaluate_loss(ResUNetPP<T>& model, const std::vector<SegmentationSample>& samples, LossKind loss,
                     Index batch_size) {
  if (samples.empty()) throw DatasetError("cannot evaluate the loss of an empty set");
  NoGradScope<T> no_grad;
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  double total = 0;
  for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t n = std::min(idx.size() - b, static_cast<std::size_t>(batch_size));
    const auto batch = make_batch<T>(samples, std::span(idx).subspan(b, n));
    const auto l = compute_loss(model.forward(batch.images, Mode::Eval), batch.masks, loss);
    total += static_cast<double>(l.item()) * static_cast<double>(n);
  }
  return total / static_cast<double>(samples.size());
}

template <typename T>
TrainResult train(ResUNetPP<T>& model, const std::vector<SegmentationSample>& train_set,
                  const std::vector<SegmentationSample>& val_set, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate();
  if (train_set.empty()) throw DatasetError("training set is empty");
  if (val_set.empty()) throw DatasetError("validation set is empty");

  const auto start = std::chrono::steady_clock::now();
  auto params = model.parameters().trainable;
  OptimizerState state{.options = config.nadam};
  EarlyStopping stopper(config.early_stop_patience);
  Rng rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  ModelSnapshot<T> best;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = epoch_lr(epoch, config);
    rng.shuffle(order.begin(), order.end());
    double train_total = 0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t n = std::min(order.size() - b, bs);
      const auto batch = make_batch<T>(train_set, std::span(order).subspan(b, n));
      double loss = 0;
      try {
        loss = train_step(model, params, state, batch, config.loss, lr);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(result.steps + 1) + ")");
      }
      train_total += loss * static_cast<double>(n);
      ++result.steps;
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.train_loss = train_total / static_cast<double>(order.size());
    rec.val_loss = evaluate_loss(model, val_set, config.loss, config.batch_size);
    if (!std::isfinite(rec.val_loss)) {
      throw NumericError("validation loss became non-finite at epoch " + std::to_string(rec.epoch));
    }
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    if (stopper.update(rec.val_loss)) best = ModelSnapshot<T>::capture(model);
    if (stopper.should_stop()) {
      result.stopped_early = epoch + 1 < config.epochs;
      break;
    }
  }
  best.restore(model);
  result.best_epoch = stopper.best_epoch();
  result.best_val_loss = stopper.best_loss();
  return result;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,lr,train_loss,val_loss\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + fmt(r.lr) + "," + fmt(r.train_loss) + "," + fmt(r.val_loss) + "\n";
  }
  return out;
}

std::string timing_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,wall_time\n";
  for (const auto& r : history) out += std::to_string(r.epoch) + "," + fmt(r.wall_time) + "\n";
  return out;
}

#define RESUNETPP_INSTANTIATE(T)                                                                                    \
  template void nadam_step(std::vector<NamedTensor<T>>&, OptimizerState&, double);                                 \
  template struct ModelSnapshot<T>;                                                                                 \
  template Tensor<T> compute_loss(const Tensor<T>&, const Tensor<T>&, LossKind);                                    \
  template double train_step(ResUNetPP<T>&, std::vector<NamedTensor<T>>&, OptimizerState&, const Batch<T>&,         \
                             LossKind, double);                                                                     \
  template double evaluate_loss(ResUNetPP<T>&, const std::vector<SegmentationSample>&, LossKind, Index);            \
  template TrainResult train(ResUNetPP<T>&, const std::vector<SegmentationSample>&,                                 \
                             const std::vector<SegmentationSample>&, const TrainConfig&, const TrainHooks&);

RESUNETPP_INSTANTIATE(float)
RESUNETPP_INSTANTIATE(double)

}  // namespace resunetpp
