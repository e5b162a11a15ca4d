#pragma once

// Loss, optimizer, schedule and the training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vito/dataset.hpp"
#include "vito/model.hpp"

namespace vito {

struct TrainConfig {
  int batch_size = 100;
  int max_epochs = 500;
  int patience = 50;
  double lr0 = 1e-3;
  double weight_decay = 1e-4;
  double epsilon = 1e-8;  // loss stabilizer
  int augment_r_max = 0;  // 0 or 1 disables input subsampling augmentation
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Throws InvalidConfig.
  void validate() const;

  std::string to_text() const;
  /// Accepts exactly the keys to_text() writes; unknown keys throw InvalidConfig.
  static TrainConfig from_text(const std::string& text);

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// (1/N) sum_j ||pred_j - target_j|| / (epsilon + ||target_j||) over the
/// leading (batch) dimension, accumulated in double. If `grad` is given it
/// receives d(loss)/d(pred). epsilon = 0 gives the plain metric.
template <typename T>
double relative_l2_loss(const nn::Tensor<T>& pred, const nn::Tensor<T>& target, double epsilon,
                        nn::Tensor<T>* grad = nullptr);

/// Per-sample ||pred_j - target_j|| / (epsilon + ||target_j||).
template <typename T>
std::vector<double> relative_l2_per_sample(const nn::Tensor<T>& pred, const nn::Tensor<T>& target, double epsilon);

/// lr0 * (1 + cos(pi * epoch / max_epochs)) / 2, epochs counted from 0.
double cosine_lr(double lr0, int epoch, int max_epochs);

/// Adam with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
template <typename T>
class AdamW {
 public:
  AdamW(nn::ParamList<T> params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(double lr);
  long steps() const { return t_; }

 private:
  nn::ParamList<T> params_;
  std::vector<std::vector<double>> m_, v_;
  double wd_, b1_, b2_, eps_;
  long t_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

/// Patience-based stopping on a loss to be minimized.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);

  /// Records the loss of `epoch`; returns true if this epoch is the new best.
  bool update(int epoch, double loss);
  bool should_stop() const { return stale_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  int stale_ = 0;
  int best_epoch_ = -1;
  double best_ = 0.0;
};

/// Subsamples every image of a (N, 1, n, m) batch by stride r with the side
/// rounded to the nearest integer (see subsample_rounded). r = 1 is identity.
nn::Tensor<float> augment_subsample(const nn::Tensor<float>& batch, int r);
/// Mesh of an r-subsampled input.
Mesh2D augment_mesh(const Mesh2D& mesh, int r);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;

  double best_val_loss() const;
  /// "epoch,train_loss,val_loss,lr" with round-trip precision.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

struct TrainOptions {
  /// If set: history.csv (rewritten every epoch), best.ckpt and config.txt.
  std::filesystem::path run_dir;
  /// Extra text appended to config.txt (dataset provenance, CLI flags).
  std::string config_note;
  std::function<void(const EpochRecord&, bool improved)> on_epoch;
};

/// Trains on the dataset's train split and selects by validation loss. On
/// return the model holds the best-validation parameters. Input and target
/// normalization are set from the training split before the first step.
/// Throws InvalidArgument (empty split, r too large), NumericError
/// (non-finite loss, with epoch, batch and lr).
TrainHistory train(Model<float>& model, const Dataset& dataset, const TrainConfig& cfg,
                   const TrainOptions& options = {});

/// Mean loss (with `epsilon`) of eval-mode predictions over `indices`.
double validation_loss(const Model<float>& model, const Dataset& dataset, const IndexRange& range, double epsilon,
                       int batch_size);

/// Stacks samples [begin, end) or a list of indices into a batch.
nn::Tensor<float> gather(const nn::Tensor<float>& all, const std::vector<std::size_t>& indices);

}  // namespace vito
