#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "spiralmlp/data.hpp"
#include "spiralmlp/model.hpp"
#include "spiralmlp/model_config.hpp"
#include "spiralmlp/tensor.hpp"

namespace spiralmlp {

enum class Schedule { Constant, Cosine };
enum class Precision { F32, F64 };

std::string to_string(Schedule s);
std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

struct TrainConfig {
  double lr = 5e-4;
  double weight_decay = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  Schedule schedule = Schedule::Cosine;
  std::size_t warmup_epochs = 5;
  Precision precision = Precision::F32;
  // Synthetic data, used when training with `--data synth`.
  std::size_t image_size = 32;
  std::size_t synth_n = 512;
  std::size_t synth_classes = 2;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Training keys (same file as the model keys):
//   lr, weight_decay, beta1, beta2, adam_eps, epochs, batch_size, seed,
//   schedule = constant | cosine, warmup_epochs, precision = f32 | f64,
//   image_size, synth_n, synth_classes
const std::vector<std::string>& train_config_keys();
TrainConfig train_config_from(const KeyValues& kv);
std::string serialize_train_config(const TrainConfig& cfg);

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Parses a whole config file; unknown keys are rejected.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

/// Step-indexed learning rate. Cosine: linear warmup over warmup_epochs,
/// then half-cosine decay to zero at the last step.
double learning_rate(const TrainConfig& cfg, std::uint64_t step, std::size_t steps_per_epoch);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
};

template <typename T>
AdamState<T> make_adam_state(std::span<Parameter<T>* const> params);

/// One AdamW update (step is 1-based for bias correction). Decoupled decay
/// multiplies the value by (1 - lr * wd) before the Adam update and only for
/// parameters with `decay` set (never biases or LayerNorm). Throws
/// std::runtime_error naming the parameter on a non-finite gradient.
template <typename T>
void adamw_step(std::span<Parameter<T>* const> params, AdamState<T>& state,
                const TrainConfig& cfg, double lr, std::uint64_t step);

struct MetricRow {
  std::uint64_t step = 0;   ///< 1-based optimizer step
  std::uint64_t epoch = 0;  ///< 0-based epoch
  double loss = 0.0;        ///< batch mean loss
  double top1 = 0.0;        ///< running train accuracy over the epoch so far
  bool operator==(const MetricRow&) const = default;
};

/// `step,epoch,loss,top1` with %.9g values.
std::string metrics_csv(const std::vector<MetricRow>& rows);

/// Everything needed to resume: configs, step, parameters, moments and the
/// running accuracy counters of the interrupted epoch. The
/// drop-path and shuffling generators are counter-based, so (seed, step) is
/// their complete state.
struct Checkpoint {
  std::string model_config;
  std::string train_config;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t epoch_correct = 0;  ///< running Top-1 counters of the current epoch
  std::uint64_t epoch_seen = 0;
  Precision precision = Precision::F32;
  std::vector<std::string> names;
  std::vector<Tensor<double>> values, m, v;

  bool operator==(const Checkpoint&) const = default;
};

// File layout, all integers little-endian:
//   "SPMLCKPT"  u32 version(=1)  u32 element bits (32 | 64)
//   u64 step  u64 seed  u64 epoch_correct  u64 epoch_seen
//   str model_config  str train_config
//   u32 count, then per parameter: str name, blob value, blob m, blob v
// where str = u32 length + bytes and blob is the tensor blob format.
void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
Checkpoint make_checkpoint(const SpiralMLPModel<T>& model, const AdamState<T>& adam,
                           const TrainConfig& cfg, std::uint64_t step);

/// Copies parameters (and moments, when `adam` is given) out of a checkpoint.
/// A layout mismatch throws ShapeError listing every differing entry.
template <typename T>
void restore_checkpoint(SpiralMLPModel<T>& model, AdamState<T>* adam, const Checkpoint& ckpt);

struct TrainHooks {
  /// Called after each full epoch; returning false stops training.
  std::function<bool(std::uint64_t epoch, std::uint64_t step)> on_epoch_end;
  /// Stop after this many total steps (0: run all epochs).
  std::uint64_t stop_at_step = 0;
};

struct TrainResult {
  std::vector<MetricRow> metrics;
  Checkpoint checkpoint;
};

/// Mini-batch AdamW training with cross-entropy. Epoch e visits the samples
/// in a Fisher-Yates permutation drawn from CounterRng(seed, 1000003 + e);
/// the last batch of an epoch may be short. Gradients of a batch are
/// accumulated sample by sample in batch order.
template <typename T>
TrainResult train(SpiralMLPModel<T>& model, const TrainConfig& cfg, const Dataset& data,
                  const Checkpoint* resume = nullptr, const TrainHooks& hooks = {});

/// Top-1 accuracy in evaluation mode. Throws on an empty dataset.
template <typename T>
double evaluate(const SpiralMLPModel<T>& model, const Dataset& data);

/// Mean cross-entropy in evaluation mode.
template <typename T>
double mean_loss(const SpiralMLPModel<T>& model, const Dataset& data);

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::uint64_t epoch, std::size_t n);

}  // namespace spiralmlp
