#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "spiralmlp/data.hpp"
#include "spiralmlp/model.hpp"
#include "spiralmlp/spiral_fc.hpp"
#include "spiralmlp/train.hpp"

namespace spiralmlp {

/// What a measurement ran on. Two stamps taken in one process compare equal.
struct EnvironmentStamp {
  int threads = 1;
  Precision precision = Precision::F32;
  std::string compiler;
  std::string build;

  std::string to_string() const;
  bool operator==(const EnvironmentStamp&) const = default;
};

EnvironmentStamp environment_stamp(Precision precision);

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::F32 : Precision::F64;
}

inline constexpr std::size_t kMinTimedIterations = 30;
inline constexpr std::size_t kMinWarmupIterations = 5;

struct TimingStats {
  double median_ms = 0.0;
  double mad_ms = 0.0;  ///< median absolute deviation from the median
  std::size_t repeats = 1;  ///< calls folded into each timed sample
  std::vector<double> samples_ms;  ///< per-call time of each sample
};

/// Runs `fn` `warmup` times, then takes `iters` samples. Each sample times
/// `repeats` back-to-back calls, with `repeats` grown until one sample lasts
/// at least `min_sample_ms`. Iteration counts below the minimums above are
/// raised to them.
TimingStats time_it(const std::function<void()>& fn, std::size_t iters = kMinTimedIterations,
                    std::size_t warmup = kMinWarmupIterations, double min_sample_ms = 0.0);

double median(std::vector<double> v);

/// Least-squares slope of log(y) against log(x).
double log_log_slope(const std::vector<double>& x, const std::vector<double>& y);

// ---------------------------------------------------------------- latency

struct BenchRow {
  std::string model;
  std::size_t resolution = 0;
  double median_ms = 0.0;
  double mad_ms = 0.0;
  std::size_t params = 0;
  double gflops = 0.0;  ///< 2 x multiply-accumulates of one forward pass, / 1e9
};

struct BenchReport {
  EnvironmentStamp env;
  std::vector<BenchRow> rows;

  /// `model,resolution,median_ms,mad_ms,params,gflops,threads,precision`
  std::string csv() const;
};

/// Single-image forward latency at each square resolution.
template <typename T>
BenchReport latency_bench(const std::string& name, const SpiralMLPModel<T>& model,
                          const std::vector<std::size_t>& resolutions,
                          std::size_t iters = kMinTimedIterations,
                          std::size_t warmup = kMinWarmupIterations);

// ------------------------------------------------------------- complexity

struct ComplexityPoint {
  std::size_t height = 0, width = 0;
  double median_ms = 0.0;
  double mad_ms = 0.0;
  std::size_t macs = 0;
};

struct ComplexityReport {
  EnvironmentStamp env;
  std::vector<ComplexityPoint> points;
  double time_exponent = 0.0;  ///< fitted slope of log(time) vs log(H*W)
  double mac_exponent = 0.0;   ///< same fit for the analytic MAC count

  /// `height,width,positions,median_ms,mad_ms,macs` then two `# ...` lines
  /// with the fitted exponents.
  std::string csv() const;
};

/// Times SpiralFC::forward at each size. Needs at least 4 sizes whose H*W
/// spans a factor of 16 or more; otherwise throws ConfigError.
template <typename T>
ComplexityReport complexity_scan(const SpiralFC<T>& layer,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& sizes,
                                 std::size_t iters = kMinTimedIterations,
                                 std::size_t warmup = kMinWarmupIterations,
                                 double min_sample_ms = 2.0);

// ------------------------------------------------------------- throughput

struct ThroughputOptions {
  std::size_t batch_size = 32;
  std::size_t resolution = 224;
  double duration_s = 5.0;
  /// When non-zero, run exactly this many batches instead of timing.
  std::size_t fixed_iterations = 0;
  std::size_t warmup_batches = 1;
};

struct ThroughputRow {
  std::string model;
  std::size_t batch_size = 0;
  std::size_t resolution = 0;
  std::size_t batches = 0;
  std::size_t images = 0;
  double seconds = 0.0;
  double images_per_s = 0.0;
  double ms_per_image = 0.0;
};

/// `model,batch_size,resolution,batches,images,seconds,images_per_s,ms_per_image,threads,precision`
std::string throughput_csv(const std::vector<ThroughputRow>& rows, const EnvironmentStamp& env);

template <typename T>
ThroughputRow throughput_bench(const std::string& name, const SpiralMLPModel<T>& model,
                               const ThroughputOptions& opt);

// ------------------------------------------------------------- resolution

struct ResolutionRow {
  std::size_t resolution = 0;
  bool ok = false;
  std::string error;
  double accuracy = -1.0;  ///< negative when no labelled data was given
  std::uint64_t output_hash = 0;  ///< FNV-1a over the logits bytes
  bool deterministic = false;     ///< two passes gave bit-identical logits
};

/// `resolution,status,accuracy,output_hash,deterministic,error`
std::string resolution_csv(const std::vector<ResolutionRow>& rows);

/// Evaluates the unmodified model at each square resolution. With
/// `data_for`, accuracy on data_for(resolution); without it, a shape and
/// determinism pass over a fixed random batch of `probe_images`. A failing
/// resolution yields an error row and the sweep continues.
template <typename T>
std::vector<ResolutionRow> resolution_compat(
    const SpiralMLPModel<T>& model, const std::vector<std::size_t>& resolutions,
    const std::function<Dataset(std::size_t)>& data_for = {}, std::size_t probe_images = 4);

}  // namespace spiralmlp
