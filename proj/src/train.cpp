#include "spiralmlp/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "spiralmlp/errors.hpp"
#include "spiralmlp/nn.hpp"
#include "spiralmlp/rng.hpp"

namespace spiralmlp {

std::string to_string(Schedule s) { return s == Schedule::Cosine ? "cosine" : "constant"; }
std::string to_string(Precision p) { return p == Precision::F64 ? "f64" : "f32"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32" || s == "F32") return Precision::F32;
  if (s == "f64" || s == "F64") return Precision::F64;
  throw ConfigError("unknown precision '" + s + "' (expected f32 or f64)");
}

namespace {

Schedule parse_schedule(const std::string& s) {
  if (s == "cosine") return Schedule::Cosine;
  if (s == "constant") return Schedule::Constant;
  throw ConfigError("unknown schedule '" + s + "' (expected constant or cosine)");
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train config: lr must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train config: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train config: beta1 and beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train config: adam_eps must be > 0");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (synth_classes < 2) throw ConfigError("train config: synth_classes must be >= 2");
}

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys{
      "lr",     "weight_decay", "beta1",     "beta2",      "adam_eps",
      "epochs", "batch_size",   "seed",      "schedule",   "warmup_epochs",
      "precision", "image_size", "synth_n", "synth_classes"};
  return keys;
}

TrainConfig train_config_from(const KeyValues& kv) {
  TrainConfig c;
  auto real = [&](const char* k, double& out) {
    if (auto it = kv.find(k); it != kv.end()) out = parse_real(k, it->second);
  };
  auto size = [&](const char* k, std::size_t& out) {
    if (auto it = kv.find(k); it != kv.end()) out = parse_size(k, it->second);
  };
  real("lr", c.lr);
  real("weight_decay", c.weight_decay);
  real("beta1", c.beta1);
  real("beta2", c.beta2);
  real("adam_eps", c.adam_eps);
  size("epochs", c.epochs);
  size("batch_size", c.batch_size);
  if (auto it = kv.find("seed"); it != kv.end()) c.seed = parse_size("seed", it->second);
  if (auto it = kv.find("schedule"); it != kv.end()) c.schedule = parse_schedule(it->second);
  size("warmup_epochs", c.warmup_epochs);
  if (auto it = kv.find("precision"); it != kv.end()) c.precision = parse_precision(it->second);
  size("image_size", c.image_size);
  size("synth_n", c.synth_n);
  size("synth_classes", c.synth_classes);
  c.validate();
  return c;
}

std::string serialize_train_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "lr = " << real_text(c.lr) << "\n"
     << "weight_decay = " << real_text(c.weight_decay) << "\n"
     << "beta1 = " << real_text(c.beta1) << "\n"
     << "beta2 = " << real_text(c.beta2) << "\n"
     << "adam_eps = " << real_text(c.adam_eps) << "\n"
     << "epochs = " << c.epochs << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "seed = " << c.seed << "\n"
     << "schedule = " << to_string(c.schedule) << "\n"
     << "warmup_epochs = " << c.warmup_epochs << "\n"
     << "precision = " << to_string(c.precision) << "\n"
     << "image_size = " << c.image_size << "\n"
     << "synth_n = " << c.synth_n << "\n"
     << "synth_classes = " << c.synth_classes << "\n";
  return os.str();
}

RunConfig parse_run_config(std::string_view text) {
  const KeyValues kv = parse_key_values(text);
  KeyValues model_kv, train_kv;
  const auto& mk = model_config_keys();
  const auto& tk = train_config_keys();
  for (const auto& [k, v] : kv) {
    if (std::find(mk.begin(), mk.end(), k) != mk.end()) model_kv.emplace(k, v);
    else if (std::find(tk.begin(), tk.end(), k) != tk.end()) train_kv.emplace(k, v);
    else throw ConfigError("config: unknown key '" + k + "'");
  }
  return {model_config_from(model_kv), train_config_from(train_kv)};
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_run_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

double learning_rate(const TrainConfig& cfg, std::uint64_t step, std::size_t steps_per_epoch) {
  if (cfg.schedule == Schedule::Constant) return cfg.lr;
  const double warm = double(cfg.warmup_epochs * steps_per_epoch);
  const double total = double(cfg.epochs * steps_per_epoch);
  const double s = double(step);
  if (s < warm) return cfg.lr * (s + 1.0) / warm;
  const double span = std::max(1.0, total - warm);
  const double progress = std::min(1.0, (s - warm) / span);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
AdamState<T> make_adam_state(std::span<Parameter<T>* const> params) {
  AdamState<T> s;
  for (const Parameter<T>* p : params) {
    s.m.emplace_back(p->value.shape());
    s.v.emplace_back(p->value.shape());
  }
  return s;
}

template <typename T>
void adamw_step(std::span<Parameter<T>* const> params, AdamState<T>& state,
                const TrainConfig& cfg, double lr, std::uint64_t step) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adamw: moment count does not match parameter count");
  if (step < 1) throw std::invalid_argument("adamw: step is 1-based");
  for (std::size_t i = 0; i < params.size(); ++i)
    for (T g : params[i]->grad.data())
      if (!std::isfinite(double(g)))
        throw std::runtime_error("adamw: non-finite gradient in " + params[i]->name);
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    const double shrink = p.decay ? 1.0 - lr * cfg.weight_decay : 1.0;
    T* w = p.value.ptr();
    const T* g = p.grad.ptr();
    T* m = state.m[i].ptr();
    T* v = state.v[i].ptr();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = cfg.beta1 * double(m[j]) + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * double(v[j]) + (1.0 - cfg.beta2) * gj * gj;
      m[j] = T(mj);
      v[j] = T(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg.adam_eps);
      w[j] = T(double(w[j]) * shrink - lr * update);
    }
  }
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "step,epoch,loss,top1\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%llu,%llu,%.9g,%.9g\n", (unsigned long long)r.step,
                  (unsigned long long)r.epoch, r.loss, r.top1);
    out += buf;
  }
  return out;
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  CounterRng rng(seed, 1000003 + epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
  return perm;
}

template <typename T>
Checkpoint make_checkpoint(const SpiralMLPModel<T>& model, const AdamState<T>& adam,
                           const TrainConfig& cfg, std::uint64_t step) {
  Checkpoint c;
  c.model_config = serialize_model_config(model.config());
  c.train_config = serialize_train_config(cfg);
  c.step = step;
  c.seed = cfg.seed;
  c.precision = sizeof(T) == 4 ? Precision::F32 : Precision::F64;
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.names.push_back(params[i]->name);
    c.values.push_back(params[i]->value.template cast<double>());
    c.m.push_back(i < adam.m.size() ? adam.m[i].template cast<double>()
                                    : Tensor<double>(params[i]->value.shape()));
    c.v.push_back(i < adam.v.size() ? adam.v[i].template cast<double>()
                                    : Tensor<double>(params[i]->value.shape()));
  }
  return c;
}

template <typename T>
void restore_checkpoint(SpiralMLPModel<T>& model, AdamState<T>* adam, const Checkpoint& ckpt) {
  auto params = model.parameters();
  std::string diff;
  const std::size_t n = std::max(params.size(), ckpt.names.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::string expected =
        i < params.size() ? params[i]->name + " " + to_string(params[i]->value.shape()) : "(none)";
    const std::string found =
        i < ckpt.names.size() ? ckpt.names[i] + " " + to_string(ckpt.values[i].shape()) : "(none)";
    if (expected != found)
      diff += "\n  #" + std::to_string(i) + " expected " + expected + ", found " + found;
  }
  if (!diff.empty()) throw ShapeError("checkpoint does not match the model:" + diff);
  AdamState<T> restored;
  for (std::size_t i = 0; i < params.size(); ++i) {
    restored.m.push_back(ckpt.m[i].template cast<T>());
    restored.v.push_back(ckpt.v[i].template cast<T>());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->value = ckpt.values[i].template cast<T>();
    params[i]->zero_grad();
  }
  if (adam) *adam = std::move(restored);
}

template <typename T>
TrainResult train(SpiralMLPModel<T>& model, const TrainConfig& cfg, const Dataset& data,
                  const Checkpoint* resume, const TrainHooks& hooks) {
  cfg.validate();
  auto params = model.parameters();
  AdamState<T> adam = make_adam_state<T>(params);
  std::uint64_t step = 0, epoch_correct = 0, epoch_seen = 0;
  if (resume) {
    restore_checkpoint(model, &adam, *resume);
    step = resume->step;
    epoch_correct = resume->epoch_correct;
    epoch_seen = resume->epoch_seen;
  }
  TrainResult result;
  auto snapshot = [&] {
    result.checkpoint = make_checkpoint(model, adam, cfg, step);
    result.checkpoint.epoch_correct = epoch_correct;
    result.checkpoint.epoch_seen = epoch_seen;
  };
  if (cfg.epochs == 0 || data.size() == 0) {
    snapshot();
    return result;
  }
  if (data.size() > (std::size_t{1} << 20))
    throw std::invalid_argument("train: dataset larger than 2^20 samples");
  const std::size_t n = data.size(), b = cfg.batch_size;
  const std::size_t steps_per_epoch = (n + b - 1) / b;
  const std::uint64_t total = cfg.epochs * steps_per_epoch;
  const std::uint64_t last = hooks.stop_at_step ? std::min<std::uint64_t>(total, hooks.stop_at_step) : total;

  const std::size_t k = model.num_classes();
  while (step < last) {
    const std::uint64_t epoch = step / steps_per_epoch;
    const std::vector<std::size_t> perm = epoch_permutation(cfg.seed, epoch, n);
    for (std::size_t bi = step % steps_per_epoch; bi < steps_per_epoch && step < last; ++bi) {
      const std::size_t lo = bi * b, hi = std::min(n, lo + b);
      const T inv = T(1) / T(hi - lo);
      model.zero_grad();
      double loss = 0.0;
      for (std::size_t pos = lo; pos < hi; ++pos) {
        const std::size_t idx = perm[pos];
        const int label = data.labels[idx];
        ModelTape<T> tape;
        const ForwardContext ctx{true, cfg.seed, step, idx};
        const Tensor<T> logits = model.forward_image(data.image<T>(idx), ctx, &tape);
        auto ce = cross_entropy(logits.reshaped({1, k}), std::span<const int>(&label, 1));
        loss += double(ce.loss);
        const auto best = std::max_element(logits.data().begin(), logits.data().end());
        epoch_correct += std::size_t(best - logits.data().begin()) == std::size_t(label);
        ++epoch_seen;
        for (auto& g : ce.grad.data()) g *= inv;
        model.backward_image(tape, ce.grad.reshaped({k}));
      }
      const double lr = learning_rate(cfg, step, steps_per_epoch);
      ++step;
      adamw_step<T>(params, adam, cfg, lr, step);
      result.metrics.push_back(
          {step, epoch, loss / double(hi - lo), double(epoch_correct) / double(epoch_seen)});
    }
    if (step % steps_per_epoch == 0) {
      epoch_correct = epoch_seen = 0;
      if (hooks.on_epoch_end && !hooks.on_epoch_end(epoch, step)) break;
    }
  }
  snapshot();
  return result;
}

template <typename T>
double evaluate(const SpiralMLPModel<T>& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor<T> logits = model.forward_image(data.image<T>(i));
    const auto best = std::max_element(logits.data().begin(), logits.data().end());
    correct += std::size_t(best - logits.data().begin()) == std::size_t(data.labels[i]);
  }
  return double(correct) / double(data.size());
}

template <typename T>
double mean_loss(const SpiralMLPModel<T>& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("mean_loss: empty dataset");
  double total = 0.0;
  const std::size_t k = model.num_classes();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor<T> logits = model.forward_image(data.image<T>(i));
    const int label = data.labels[i];
    total += double(cross_entropy(logits.reshaped({1, k}), std::span<const int>(&label, 1)).loss);
  }
  return total / double(data.size());
}

#define SPIRALMLP_INSTANTIATE(T)                                                               \
  template AdamState<T> make_adam_state<T>(std::span<Parameter<T>* const>);                    \
  template void adamw_step<T>(std::span<Parameter<T>* const>, AdamState<T>&,                   \
                              const TrainConfig&, double, std::uint64_t);                      \
  template Checkpoint make_checkpoint<T>(const SpiralMLPModel<T>&, const AdamState<T>&,        \
                                         const TrainConfig&, std::uint64_t);                   \
  template void restore_checkpoint<T>(SpiralMLPModel<T>&, AdamState<T>*, const Checkpoint&);   \
  template TrainResult train<T>(SpiralMLPModel<T>&, const TrainConfig&, const Dataset&,        \
                                const Checkpoint*, const TrainHooks&);                         \
  template double evaluate<T>(const SpiralMLPModel<T>&, const Dataset&);                       \
  template double mean_loss<T>(const SpiralMLPModel<T>&, const Dataset&);

SPIRALMLP_INSTANTIATE(float)
SPIRALMLP_INSTANTIATE(double)

}  // namespace spiralmlp
