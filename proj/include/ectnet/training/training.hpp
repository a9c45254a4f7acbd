#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ectnet/architectures/checkpoint.hpp"
#include "ectnet/architectures/network.hpp"
#include "ectnet/data/dataset.hpp"
#include "json.hpp"

namespace ectnet {

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;  // first moments, one per parameter
  std::vector<Tensor<T>> v;  // second moments
  std::uint64_t t = 0;       // completed steps

  /// Zero accumulators shaped like `params`.
  static AdamState zeros_like(std::span<const Variable<T>> params);
};

/// One bias-corrected Adam update of every parameter from its current
/// gradient; a parameter without a gradient is treated as having zero gradient.
/// `weight_decay` adds decay * param to the gradient (off when 0).
template <typename T>
void adam_step(std::span<Variable<T>> params, AdamState<T>& state, double lr,
               const AdamHyper& hyper = {}, double weight_decay = 0.0);

// ---------------------------------------------------------------------------
// Configuration

struct LrStep {
  std::size_t epoch = 0;
  double lr = 0.0;
  friend bool operator==(const LrStep&, const LrStep&) = default;
};

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 10000;
  double lr_initial = 4.0e-5;
  std::vector<LrStep> lr_schedule{{5000, 4.0e-6}, {7500, 4.0e-7}};
  AdamHyper adam;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // training-state snapshot interval in epochs, 0 = only at the end
  std::size_t crop_length = 224;

  std::size_t validation_interval = 1;  // validate after every n-th epoch and after the last
  std::size_t validation_crops = 10;

  // Off by default.
  double weight_decay = 0.0;
  double label_smoothing = 0.0;
  double grad_clip_norm = 0.0;  // global L2 norm cap, 0 = no clipping

  /// Throws ConfigError on zero sizes, negative rates or a non-increasing schedule.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are a ConfigError.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Piecewise-constant learning rate: lr_initial until the first step epoch,
/// then each step's rate from its epoch onward.
double lr_at(std::size_t epoch, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Log

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& j);
  /// Equality ignoring wall-clock time.
  bool same_outcome(const EpochRecord& other) const;
};

struct TrainLog {
  std::vector<EpochRecord> records;

  void append(const EpochRecord& r);  // epochs must increase
  void write_jsonl(const std::filesystem::path& path) const;
  static void append_jsonl(const EpochRecord& r, const std::filesystem::path& path);
  static TrainLog read_jsonl(const std::filesystem::path& path);
  bool same_outcome(const TrainLog& other) const;
};

// ---------------------------------------------------------------------------
// Training loop

struct TrainOptions {
  /// When set, receives best.ckpt, state.ckpt and train_log.jsonl.
  std::optional<std::filesystem::path> out_dir;
  /// Stops after this many completed epochs (as if interrupted); the state is saved.
  std::optional<std::size_t> stop_after;
  unsigned eval_threads = 1;
  /// Merged into the metadata of every checkpoint the run writes.
  nlohmann::json checkpoint_meta = nlohmann::json::object();
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const std::string&)> notice;
};

struct TrainResult {
  TrainLog log;
  std::size_t epochs_completed = 0;
  std::optional<std::size_t> best_epoch;
  double best_val_accuracy = -1.0;
  std::optional<Checkpoint> best;  // network at the best validation accuracy
  Checkpoint state;                // network + optimizer after the last completed epoch
  std::vector<double> checkpointed_accuracies;  // validation accuracy at each best.ckpt write
};

/// Trains `net` in place. Every epoch shuffles with stream ("train.shuffle",
/// epoch) and crops with ("train.crop", epoch), so a run is a pure function of
/// the config and the initial network. Validation uses ten-crop evaluation.
template <typename T>
TrainResult train(Network<T>& net, const Dataset& train_ds, const Dataset& val_ds,
                  const TrainConfig& config, const TrainOptions& options = {});

/// Continues a run from a training-state checkpoint and the log written so
/// far. `net` receives the stored weights. The batch size, seed, crop length
/// and optimizer settings must match the stored config (epochs may grow).
/// A finished run returns immediately with a notice.
template <typename T>
TrainResult resume(Network<T>& net, const Checkpoint& state, const TrainLog& log,
                   const Dataset& train_ds, const Dataset& val_ds, const TrainConfig& config,
                   const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Learning-rate range finder

struct LrFindConfig {
  double lr_min = 1e-7;
  double lr_max = 1e-1;
  double growth = 1.5;
  std::size_t epochs_per_step = 1;
  std::size_t smoothing_window = 3;  // centred moving average over this many points
  double divergence_factor = 4.0;    // stop once loss > factor * first loss

  void validate() const;
};

struct LrPoint {
  double lr = 0.0;
  double loss = 0.0;
  double smoothed = 0.0;
};

struct LrFindResult {
  std::vector<LrPoint> curve;
  double suggested_lr = 0.0;
  bool diverged = false;
};

/// Sweeps lr_min * growth^i up to lr_max. `run` performs one step of training
/// at the given rate (state carries over) and returns its mean loss. The
/// suggestion is the rate where the smoothed loss falls fastest per unit log lr.
LrFindResult lr_range_find(const std::function<double(double lr)>& run, const LrFindConfig& config);

/// Range finder on a fresh copy of `net` with Adam; each step trains
/// `epochs_per_step` epochs of the usual shuffled, cropped mini-batches.
template <typename T>
LrFindResult lr_range_find(const Network<T>& net, const Dataset& train_ds,
                           const TrainConfig& config, const LrFindConfig& finder);

}  // namespace ectnet
