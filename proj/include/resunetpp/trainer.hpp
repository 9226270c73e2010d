#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "resunetpp/data.hpp"
#include "resunetpp/model.hpp"

namespace resunetpp {

enum class LossKind { Bce, Dice };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

// Cosine annealing with warm restarts. Cycle i lasts t0 * t_mult^i epochs.
struct SgdrConfig {
  int t0 = 10;
  int t_mult = 2;
  double lr_min = 1e-7;
};

struct NadamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  Index batch_size = 16;
  double lr = 1e-5;
  LossKind loss = LossKind::Bce;
  int epochs = 300;
  int early_stop_patience = 20;
  std::optional<SgdrConfig> sgdr;
  std::uint64_t seed = 0;
  NadamOptions nadam;

  void validate() const;  // ConfigError naming the offending field
};

struct OptimizerState {
  NadamOptions options;
  std::int64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One Nesterov-Adam update of every tensor in `params` from its gradient:
//   m = b1 m + (1-b1) g,  v = b2 v + (1-b2) g^2
//   m_hat = m / (1-b1^t), v_hat = v / (1-b2^t)
//   theta -= lr * (b1 m_hat + (1-b1) g / (1-b1^t)) / (sqrt(v_hat) + eps)
// A non-finite gradient aborts the step before anything is modified and the
// NumericError names the parameter.
template <typename T>
void nadam_step(std::vector<NamedTensor<T>>& params, OptimizerState& state, double lr);

double sgdr_lr(int epoch, double lr, const SgdrConfig& sgdr);
double epoch_lr(int epoch, const TrainConfig& config);

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  // Returns true when `val_loss` is a new best (strictly lower).
  bool update(double val_loss);
  bool should_stop() const { return bad_epochs_ >= patience_; }
  int best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
  double best_loss() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  int bad_epochs_ = 0;
  double best_ = 0;
};

// Copy of every trainable tensor and batch-norm statistic of a model.
template <typename T>
struct ModelSnapshot {
  std::vector<std::vector<T>> tensors;
  std::vector<BatchNormStats<T>> stats;

  static ModelSnapshot capture(ResUNetPP<T>& model);
  void restore(ResUNetPP<T>& model) const;
};

template <typename T>
Tensor<T> compute_loss(const Tensor<T>& pred, const Tensor<T>& target, LossKind kind);

// Forward in train mode, backward, Nadam update. Returns the batch loss.
template <typename T>
double train_step(ResUNetPP<T>& model, std::vector<NamedTensor<T>>& params, OptimizerState& state,
                  const Batch<T>& batch, LossKind loss, double lr);

// Mean per-sample loss in eval mode, without recording gradients.
template <typename T>
double evaluate_loss(ResUNetPP<T>& model, const std::vector<SegmentationSample>& samples, LossKind loss,
                     Index batch_size);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  double val_loss = 0;
  double wall_time = 0;  // seconds since training started
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = 0;
  bool stopped_early = false;
  std::int64_t steps = 0;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
};

// Seeded shuffle per epoch (last short batch kept), validation once per epoch
// in eval mode, early stopping on validation loss. On return the model holds
// the weights of the best validation epoch.
template <typename T>
TrainResult train(ResUNetPP<T>& model, const std::vector<SegmentationSample>& train_set,
                  const std::vector<SegmentationSample>& val_set, const TrainConfig& config,
                  const TrainHooks& hooks = {});

// "epoch,lr,train_loss,val_loss" lines; deterministic for a fixed seed.
std::string history_csv(const std::vector<EpochRecord>& history);
// "epoch,wall_time" lines, kept apart from the history so the history stays
// byte-reproducible.
std::string timing_csv(const std::vector<EpochRecord>& history);

}  // namespace resunetpp
