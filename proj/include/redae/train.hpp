#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "redae/data.hpp"
#include "redae/metrics.hpp"
#include "redae/model.hpp"

namespace redae::train {

struct TrainConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  std::size_t batch_size = 2;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  bool shuffle = true;
  /// Step interval for progress callbacks; 0 reports epochs only.
  std::size_t log_every = 0;
  /// Share of training groups held out for per-epoch validation.
  double val_fraction = 0.1;
  /// SA-RE-DAE loss weights; empty selects median-frequency weights.
  std::vector<double> class_weights;
  /// When set, every batch sample is redrawn through this transform.
  std::optional<data::AugmentSpec> online_augment;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// One zero-initialised velocity buffer per parameter tensor.
struct OptimizerState {
  std::vector<Tensor4> velocity;

  static OptimizerState zeros(const std::vector<model::NamedParam>& params);
};

/// v <- momentum * v - lr * g; w <- w + v.
void sgdm_step(const std::vector<model::NamedParam>& params, OptimizerState& state,
               double learning_rate, double momentum);

struct StepRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based, counted over the whole run
  double loss = 0;
  double seconds = 0;     // since the start of training
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0;
  std::optional<metrics::MetricsReport> validation;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  /// epoch,step,loss,seconds
  std::string loss_csv() const;
  /// Per-epoch validation metrics, one row per class.
  std::string metrics_csv() const;
};

struct Callbacks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains in place. SA-RE-DAE takes `cfg.class_weights`, or median-frequency
/// weights of `train_set`, before the first epoch; the other variants use
/// unit weights.
/// On a non-finite value the network is restored to its state before the
/// failing step and NumericError is thrown. Returns with batch norm in
/// eval mode.
TrainLog train(model::Network& net, std::span<const data::Sample> train_set,
               std::span<const data::Sample> val_set, const TrainConfig& cfg,
               const Callbacks& callbacks = {});

/// Moves round(fraction * G) of the G groups (seeded choice) into the
/// validation set. At least one group stays on each side when G >= 2 and
/// fraction > 0.
struct ValidationSplit {
  std::vector<data::Sample> train;
  std::vector<data::Sample> val;
};
ValidationSplit carve_validation(std::vector<data::Sample> samples,
                                 const std::map<std::string, std::string>& group_of,
                                 double fraction, std::uint64_t seed);

/// Worker count from REDAE_THREADS, else the hardware concurrency.
std::size_t thread_budget();

/// Predicted mask at the sample's own size (padding handled internally).
data::Mask predict_mask(model::Network& net, const data::Image& image);

/// Pixel counts over all samples. Samples are split across `threads`
/// workers; the network must be in eval mode.
metrics::ConfusionCounts confusion(model::Network& net, std::span<const data::Sample> samples,
                                   std::size_t threads = 1);

metrics::MetricsReport evaluate(model::Network& net, std::span<const data::Sample> samples,
                                const std::string& model_name, std::size_t threads = 1);

}  // namespace redae::train
