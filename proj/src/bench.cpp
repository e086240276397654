#include "spiralmlp/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "spiralmlp/errors.hpp"
#include "spiralmlp/kernels.hpp"
#include "spiralmlp/rng.hpp"

namespace spiralmlp {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

template <typename T>
std::uint64_t fnv1a(const Tensor<T>& t, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = reinterpret_cast<const unsigned char*>(t.ptr());
  for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
  return h;
}

template <typename T>
Tensor<T> random_batch(std::size_t n, std::size_t res, std::uint64_t seed) {
  Tensor<T> x({n, res, res, 3});
  CounterRng rng(seed, 77);
  for (auto& v : x.data()) v = T(rng.normal());
  return x;
}

}  // namespace

std::string EnvironmentStamp::to_string() const {
  return "threads=" + std::to_string(threads) + " precision=" + spiralmlp::to_string(precision) +
         " compiler=" + compiler + " build=" + build;
}

EnvironmentStamp environment_stamp(Precision precision) {
  EnvironmentStamp s;
  s.threads = kernels::num_threads();
  s.precision = precision;
#if defined(__clang__)
  s.compiler = "clang-" + std::to_string(__clang_major__) + "." + std::to_string(__clang_minor__);
#elif defined(__GNUC__)
  s.compiler = "gcc-" + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
#else
  s.compiler = "unknown";
#endif
#ifdef NDEBUG
  s.build = "release";
#else
  s.build = "debug";
#endif
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double log_log_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("log_log_slope: need two or more paired points");
  double mx = 0, my = 0;
  const double n = double(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw std::domain_error("log_log_slope: non-positive value");
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw std::domain_error("log_log_slope: all x values equal");
  return sxy / sxx;
}

TimingStats time_it(const std::function<void()>& fn, std::size_t iters, std::size_t warmup,
                    double min_sample_ms) {
  iters = std::max(iters, kMinTimedIterations);
  warmup = std::max(warmup, kMinWarmupIterations);
  for (std::size_t i = 0; i < warmup; ++i) fn();
  TimingStats s;
  for (;;) {
    const auto t0 = Clock::now();
    for (std::size_t r = 0; r < s.repeats; ++r) fn();
    const double elapsed = ms_since(t0);
    if (elapsed >= min_sample_ms || s.repeats >= (std::size_t{1} << 20)) break;
    s.repeats *= elapsed > 0 ? std::max<std::size_t>(2, std::size_t(std::ceil(min_sample_ms / elapsed))) : 16;
  }
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = Clock::now();
    for (std::size_t r = 0; r < s.repeats; ++r) fn();
    s.samples_ms.push_back(ms_since(t0) / double(s.repeats));
  }
  s.median_ms = median(s.samples_ms);
  std::vector<double> dev;
  for (double v : s.samples_ms) dev.push_back(std::abs(v - s.median_ms));
  s.mad_ms = median(dev);
  return s;
}

std::string BenchReport::csv() const {
  std::string out = "model,resolution,median_ms,mad_ms,params,gflops,threads,precision\n";
  for (const auto& r : rows)
    out += r.model + "," + std::to_string(r.resolution) + "," + fmt("%.6g", r.median_ms) + "," +
           fmt("%.6g", r.mad_ms) + "," + std::to_string(r.params) + "," + fmt("%.6g", r.gflops) +
           "," + std::to_string(env.threads) + "," + to_string(env.precision) + "\n";
  return out;
}

template <typename T>
BenchReport latency_bench(const std::string& name, const SpiralMLPModel<T>& model,
                          const std::vector<std::size_t>& resolutions, std::size_t iters,
                          std::size_t warmup) {
  BenchReport report;
  report.env = environment_stamp(precision_of<T>());
  for (std::size_t res : resolutions) {
    model.check_input(res, res);
    const Tensor<T> img = random_batch<T>(1, res, 0).reshaped({res, res, 3});
    const TimingStats t = time_it([&] { (void)model.forward_image(img); }, iters, warmup);
    report.rows.push_back({name, res, t.median_ms, t.mad_ms, model.param_count(),
                           2.0 * double(model.macs(res, res)) / 1e9});
  }
  return report;
}

std::string ComplexityReport::csv() const {
  std::string out = "height,width,positions,median_ms,mad_ms,macs\n";
  for (const auto& p : points)
    out += std::to_string(p.height) + "," + std::to_string(p.width) + "," +
           std::to_string(p.height * p.width) + "," + fmt("%.6g", p.median_ms) + "," +
           fmt("%.6g", p.mad_ms) + "," + std::to_string(p.macs) + "\n";
  out += "# time_exponent " + fmt("%.6f", time_exponent) + "\n";
  out += "# mac_exponent " + fmt("%.6f", mac_exponent) + "\n";
  out += "# " + env.to_string() + "\n";
  return out;
}

template <typename T>
ComplexityReport complexity_scan(const SpiralFC<T>& layer,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& sizes,
                                 std::size_t iters, std::size_t warmup, double min_sample_ms) {
  if (sizes.size() < 4)
    throw ConfigError("complexity_scan: need at least 4 sizes, got " + std::to_string(sizes.size()));
  std::size_t lo = SIZE_MAX, hi = 0;
  for (const auto& [h, w] : sizes) {
    if (h == 0 || w == 0) throw ConfigError("complexity_scan: zero-sized input");
    lo = std::min(lo, h * w);
    hi = std::max(hi, h * w);
  }
  if (hi < 16 * lo)
    throw ConfigError("complexity_scan: sizes must span at least 16x in H*W");
  ComplexityReport r;
  r.env = environment_stamp(precision_of<T>());
  std::vector<double> pos, ms, macs;
  for (const auto& [h, w] : sizes) {
    Tensor<T> x({h, w, layer.in_channels()});
    CounterRng rng(h * 100003 + w, 5);
    for (auto& v : x.data()) v = T(rng.normal());
    (void)layer.plan(h, w);
    const TimingStats t = time_it([&] { (void)layer.forward(x); }, iters, warmup, min_sample_ms);
    r.points.push_back({h, w, t.median_ms, t.mad_ms, layer.macs(h, w)});
    pos.push_back(double(h * w));
    ms.push_back(t.median_ms);
    macs.push_back(double(layer.macs(h, w)));
  }
  r.time_exponent = log_log_slope(pos, ms);
  r.mac_exponent = log_log_slope(pos, macs);
  return r;
}

std::string throughput_csv(const std::vector<ThroughputRow>& rows, const EnvironmentStamp& env) {
  std::string out =
      "model,batch_size,resolution,batches,images,seconds,images_per_s,ms_per_image,threads,"
      "precision\n";
  for (const auto& r : rows)
    out += r.model + "," + std::to_string(r.batch_size) + "," + std::to_string(r.resolution) +
           "," + std::to_string(r.batches) + "," + std::to_string(r.images) + "," +
           fmt("%.6g", r.seconds) + "," + fmt("%.6g", r.images_per_s) + "," +
           fmt("%.6g", r.ms_per_image) + "," + std::to_string(env.threads) + "," +
           to_string(env.precision) + "\n";
  return out;
}

template <typename T>
ThroughputRow throughput_bench(const std::string& name, const SpiralMLPModel<T>& model,
                               const ThroughputOptions& opt) {
  if (opt.batch_size < 1) throw ConfigError("throughput: batch_size must be >= 1");
  model.check_input(opt.resolution, opt.resolution);
  const Tensor<T> batch = random_batch<T>(opt.batch_size, opt.resolution, 1);
  for (std::size_t i = 0; i < opt.warmup_batches; ++i) (void)model.forward(batch);
  ThroughputRow r{name, opt.batch_size, opt.resolution};
  const auto t0 = Clock::now();
  for (;;) {
    if (opt.fixed_iterations ? r.batches >= opt.fixed_iterations
                             : (r.batches > 0 && ms_since(t0) >= opt.duration_s * 1e3))
      break;
    (void)model.forward(batch);
    ++r.batches;
  }
  r.seconds = ms_since(t0) / 1e3;
  r.images = r.batches * opt.batch_size;
  r.images_per_s = r.seconds > 0 ? double(r.images) / r.seconds : 0.0;
  r.ms_per_image = r.images ? r.seconds * 1e3 / double(r.images) : 0.0;
  return r;
}

std::string resolution_csv(const std::vector<ResolutionRow>& rows) {
  std::string out = "resolution,status,accuracy,output_hash,deterministic,error\n";
  char hash[32];
  for (const auto& r : rows) {
    std::snprintf(hash, sizeof(hash), "%016llx", (unsigned long long)r.output_hash);
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out += std::to_string(r.resolution) + "," + (r.ok ? "ok" : "error") + "," +
           (r.accuracy < 0 ? std::string("") : fmt("%.6f", r.accuracy)) + "," +
           (r.ok ? std::string(hash) : std::string("")) + "," +
           (r.deterministic ? "yes" : "no") + "," + err + "\n";
  }
  return out;
}

template <typename T>
std::vector<ResolutionRow> resolution_compat(const SpiralMLPModel<T>& model,
                                             const std::vector<std::size_t>& resolutions,
                                             const std::function<Dataset(std::size_t)>& data_for,
                                             std::size_t probe_images) {
  std::vector<ResolutionRow> rows;
  for (std::size_t res : resolutions) {
    ResolutionRow row;
    row.resolution = res;
    try {
      model.check_input(res, res);
      if (data_for) {
        const Dataset data = data_for(res);
        if (data.height != res || data.width != res)
          throw ShapeError("resolution data has size " + std::to_string(data.height) + "x" +
                           std::to_string(data.width));
        std::uint64_t h1 = 0xcbf29ce484222325ULL, h2 = h1;
        std::size_t correct = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
          const Tensor<T> img = data.image<T>(i);
          const Tensor<T> a = model.forward_image(img);
          h1 = fnv1a(a, h1);
          h2 = fnv1a(model.forward_image(img), h2);
          const auto best = std::max_element(a.data().begin(), a.data().end());
          correct += std::size_t(best - a.data().begin()) == std::size_t(data.labels[i]);
        }
        if (data.size() == 0) throw std::invalid_argument("empty evaluation set");
        row.accuracy = double(correct) / double(data.size());
        row.output_hash = h1;
        row.deterministic = h1 == h2;
      } else {
        const Tensor<T> batch = random_batch<T>(probe_images, res, 2);
        const Tensor<T> a = model.forward(batch);
        const Tensor<T> b = model.forward(batch);
        if (a.shape() != Shape{probe_images, model.num_classes()})
          throw ShapeError("unexpected output shape " + to_string(a.shape()));
        row.output_hash = fnv1a(a);
        row.deterministic = a == b;
      }
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

#define SPIRALMLP_INSTANTIATE(T)                                                                  \
  template BenchReport latency_bench<T>(const std::string&, const SpiralMLPModel<T>&,             \
                                        const std::vector<std::size_t>&, std::size_t,             \
                                        std::size_t);                                             \
  template ComplexityReport complexity_scan<T>(                                                   \
      const SpiralFC<T>&, const std::vector<std::pair<std::size_t, std::size_t>>&, std::size_t,  \
      std::size_t, double);                                                                       \
  template ThroughputRow throughput_bench<T>(const std::string&, const SpiralMLPModel<T>&,        \
                                             const ThroughputOptions&);                           \
  template std::vector<ResolutionRow> resolution_compat<T>(                                       \
      const SpiralMLPModel<T>&, const std::vector<std::size_t>&,                                  \
      const std::function<Dataset(std::size_t)>&, std::size_t);

SPIRALMLP_INSTANTIATE(float)
SPIRALMLP_INSTANTIATE(double)

}  // namespace spiralmlp
