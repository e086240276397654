#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "spiralmlp/bench.hpp"
#include "spiralmlp/data.hpp"
#include "spiralmlp/kernels.hpp"
#include "spiralmlp/model.hpp"
#include "spiralmlp/trajectory.hpp"
#include "spiralmlp/train.hpp"

using namespace spiralmlp;
namespace fs = std::filesystem;

namespace {

// `--data synth` draws the training set from the config seed and holds out
// the next seed for evaluation.
Dataset load_data(const std::string& data, const TrainConfig& tc, bool held_out) {
  if (data == "synth")
    return synth_dataset(tc.seed + (held_out ? 1 : 0), tc.synth_n, tc.synth_classes,
                         tc.image_size);
  return load_cifar10(data, held_out ? CifarSplit::Test : CifarSplit::Train);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(parse_size("list", tok));
  if (out.empty()) throw ConfigError("empty list '" + s + "'");
  return out;
}

template <typename T>
int run_train(const RunConfig& rc, const std::string& data, const fs::path& out,
              const std::string& resume_path) {
  const Dataset ds = load_data(data, rc.train, false);
  SpiralMLPModel<T> model(rc.model, rc.train.seed);
  std::optional<Checkpoint> resume;
  if (!resume_path.empty()) resume = load_checkpoint(resume_path);
  fs::create_directories(out);
  TrainHooks hooks;
  hooks.on_epoch_end = [&](std::uint64_t epoch, std::uint64_t step) {
    std::cerr << "epoch " << epoch << " done at step " << step << "\n";
    return true;
  };
  const TrainResult r = train(model, rc.train, ds, resume ? &*resume : nullptr, hooks);
  write_text(out / "metrics.csv", metrics_csv(r.metrics));
  write_text(out / "config.txt", serialize_model_config(rc.model) + serialize_train_config(rc.train));
  save_checkpoint(r.checkpoint, (out / "checkpoint.bin").string());
  std::printf("steps=%llu params=%zu train_top1=%.6f\n", (unsigned long long)r.checkpoint.step,
              model.param_count(), evaluate(model, ds));
  return 0;
}

template <typename T>
int run_eval(const Checkpoint& ck, const RunConfig& rc, const std::string& data, bool train_split) {
  SpiralMLPModel<T> model(rc.model, rc.train.seed);
  restore_checkpoint<T>(model, nullptr, ck);
  const Dataset ds = load_data(data, rc.train, !train_split);
  std::printf("samples=%zu top1=%.6f loss=%.6f\n", ds.size(), evaluate(model, ds),
              mean_loss(model, ds));
  return 0;
}

RunConfig config_of(const Checkpoint& ck) {
  return parse_run_config(ck.model_config + ck.train_config);
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) std::cout << text;
  else write_text(out, text);
}

template <typename T>
void bench_model(const std::string& kind, const ModelConfig& mc, const std::vector<std::size_t>& res,
                 std::size_t iters, std::size_t warmup, const ThroughputOptions& topt,
                 const std::string& out) {
  SpiralMLPModel<T> model(mc, 0);
  if (kind == "latency") {
    emit(latency_bench(mc.name, model, res, iters, warmup).csv(), out);
  } else {
    std::vector<ThroughputRow> rows;
    for (std::size_t r : res) {
      ThroughputOptions o = topt;
      o.resolution = r;
      rows.push_back(throughput_bench(mc.name, model, o));
    }
    emit(throughput_csv(rows, environment_stamp(precision_of<T>())), out);
  }
}

template <typename T>
void bench_resolution(const Checkpoint& ck, const std::vector<std::size_t>& res,
                      const std::string& data, const std::string& out) {
  const RunConfig rc = config_of(ck);
  SpiralMLPModel<T> model(rc.model, rc.train.seed);
  restore_checkpoint<T>(model, nullptr, ck);
  std::function<Dataset(std::size_t)> data_for;
  if (data == "synth")
    data_for = [&](std::size_t r) {
      return synth_dataset(rc.train.seed + 1, rc.train.synth_n, rc.train.synth_classes, r);
    };
  emit(resolution_csv(resolution_compat(model, res, data_for)) + "# " +
           environment_stamp(precision_of<T>()).to_string() + "\n",
       out);
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* env = std::getenv("SPIRALMLP_THREADS")) kernels::set_num_threads(std::atoi(env));

  CLI::App app{"SpiralMLP training, evaluation and benchmarks"};
  app.require_subcommand(1);

  std::string config, data = "synth", out, resume, ckpt;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config, "key = value config file")->required();
  train_cmd->add_option("--data", data, "CIFAR-10 binary directory or 'synth'")->required();
  train_cmd->add_option("--out", out, "output directory")->required();
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");

  bool train_split = false;
  auto* eval_cmd = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", data, "CIFAR-10 binary directory or 'synth'")->required();
  eval_cmd->add_flag("--train-split", train_split, "evaluate on the training split");

  auto* bench_cmd = app.add_subcommand("bench", "benchmarks and trajectory figures");
  bench_cmd->require_subcommand(1);
  std::string model_name = "tiny-desk", res_list = "224", precision = "f32", sizes = "32,64,128,256,512";
  std::size_t iters = kMinTimedIterations, warmup = kMinWarmupIterations, channels = 16;
  ThroughputOptions topt;
  SpiralConfig trace{20, 3, 8, 1, Rounding::NearestInteger};
  std::string format = "svg", rounding = "nearest";

  auto add_model_opts = [&](CLI::App* c) {
    c->add_option("--model", model_name, "preset name");
    c->add_option("--res", res_list, "comma-separated square resolutions");
    c->add_option("--precision", precision, "f32 or f64");
    c->add_option("--out", out, "output CSV (default stdout)");
  };
  auto* lat = bench_cmd->add_subcommand("latency", "single-image latency, median and MAD");
  add_model_opts(lat);
  lat->add_option("--iters", iters, "timed iterations (min 30)");
  lat->add_option("--warmup", warmup, "warmup iterations (min 5)");

  auto* thr = bench_cmd->add_subcommand("throughput", "batched images per second");
  add_model_opts(thr);
  thr->add_option("--batch", topt.batch_size, "batch size");
  thr->add_option("--duration", topt.duration_s, "seconds per row");
  thr->add_option("--iterations", topt.fixed_iterations, "fixed batch count instead of duration");

  auto* cpx = bench_cmd->add_subcommand("complexity", "Spiral FC time and MACs vs H*W");
  cpx->add_option("--channels", channels, "input and output channels");
  cpx->add_option("--a-max", trace.a_max, "maximum amplitude");
  cpx->add_option("--sizes", sizes, "comma-separated square sizes");
  cpx->add_option("--precision", precision, "f32 or f64");
  cpx->add_option("--out", out, "output CSV (default stdout)");

  auto* rsl = bench_cmd->add_subcommand("resolution", "evaluate a checkpoint at other resolutions");
  rsl->add_option("--ckpt", ckpt, "checkpoint file")->required();
  rsl->add_option("--res", res_list, "comma-separated square resolutions");
  rsl->add_option("--data", data, "'synth' for labelled data, 'none' for a shape pass");
  rsl->add_option("--out", out, "output CSV (default stdout)");

  auto* trc = bench_cmd->add_subcommand("trace", "spiral trajectory as CSV or SVG");
  trc->add_option("--c-in", trace.c_in, "channels");
  trc->add_option("--a-max", trace.a_max, "maximum amplitude");
  trc->add_option("--period", trace.period, "channels per revolution");
  trc->add_option("--partitions", trace.partitions, "channel partitions");
  trc->add_option("--rounding", rounding, "nearest or bilinear");
  trc->add_option("--format", format, "csv or svg");
  trc->add_option("--out", out, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      const RunConfig rc = load_run_config(config);
      return rc.train.precision == Precision::F64 ? run_train<double>(rc, data, out, resume)
                                                  : run_train<float>(rc, data, out, resume);
    }
    if (eval_cmd->parsed()) {
      const Checkpoint ck = load_checkpoint(ckpt);
      const RunConfig rc = config_of(ck);
      return ck.precision == Precision::F64 ? run_eval<double>(ck, rc, data, train_split)
                                            : run_eval<float>(ck, rc, data, train_split);
    }
    const bool f64 = parse_precision(precision) == Precision::F64;
    if (lat->parsed() || thr->parsed()) {
      const ModelConfig mc = preset(model_name);
      const std::string kind = lat->parsed() ? "latency" : "throughput";
      if (f64) bench_model<double>(kind, mc, parse_list(res_list), iters, warmup, topt, out);
      else bench_model<float>(kind, mc, parse_list(res_list), iters, warmup, topt, out);
    } else if (cpx->parsed()) {
      std::vector<std::pair<std::size_t, std::size_t>> hw;
      for (std::size_t s : parse_list(sizes)) hw.emplace_back(s, s);
      const SpiralConfig sc{channels, trace.a_max, 8, 1, Rounding::NearestInteger};
      if (f64) emit(complexity_scan(SpiralFC<double>("fc", spiral_offsets(sc), channels), hw).csv(), out);
      else emit(complexity_scan(SpiralFC<float>("fc", spiral_offsets(sc), channels), hw).csv(), out);
    } else if (rsl->parsed()) {
      const Checkpoint ck = load_checkpoint(ckpt);
      if (ck.precision == Precision::F64) bench_resolution<double>(ck, parse_list(res_list), data, out);
      else bench_resolution<float>(ck, parse_list(res_list), data, out);
    } else if (trc->parsed()) {
      trace.rounding = parse_rounding(rounding);
      trace.validate();
      trajectory_emit(trace, parse_trace_format(format), out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
