#include "spiralmlp/model_config.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "spiralmlp/errors.hpp"

namespace spiralmlp {

std::string to_string(Style s) { return s == Style::Swin ? "swin" : "pvt"; }

Style parse_style(const std::string& s) {
  if (s == "pvt" || s == "PVT") return Style::PVT;
  if (s == "swin" || s == "Swin") return Style::Swin;
  throw ConfigError("unknown style '" + s + "' (expected pvt or swin)");
}

std::size_t ModelConfig::total_stride() const {
  std::size_t s = 1;
  for (const auto& st : stages) s *= st.stride;
  return s;
}

void ModelConfig::validate() const {
  if (num_classes < 1) throw ConfigError("model config: num_classes must be >= 1");
  if (!(drop_path >= 0.0 && drop_path < 1.0))
    throw ConfigError("model config: drop_path must lie in [0, 1)");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    const std::string where = "model config: stage" + std::to_string(i + 1);
    if (s.stride < 1) throw ConfigError(where + " stride must be >= 1");
    if (s.channels < 1 || s.expansion < 1 || s.depth < 1 || s.period < 1)
      throw ConfigError(where + " channels, expansion, depth, period must be >= 1");
    if (s.partitions < 1 || s.channels % s.partitions != 0)
      throw ConfigError(where + " partitions (" + std::to_string(s.partitions) +
                        ") must divide channels (" + std::to_string(s.channels) + ")");
  }
  if (total_stride() != 32)
    throw ConfigError("model config: stage strides multiply to " +
                      std::to_string(total_stride()) + ", expected 32");
}

namespace {

ModelConfig pyramid(std::string name, Style style, std::array<std::size_t, 4> ch,
                    std::array<std::size_t, 4> depth, std::size_t classes) {
  ModelConfig cfg;
  cfg.name = std::move(name);
  cfg.style = style;
  cfg.num_classes = classes;
  const std::array<std::size_t, 4> strides{4, 2, 2, 2};
  for (std::size_t i = 0; i < 4; ++i) {
    cfg.stages[i].stride = strides[i];
    cfg.stages[i].channels = ch[i];
    cfg.stages[i].expansion = 4;
    cfg.stages[i].depth = depth[i];
  }
  return cfg;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"B1", "B2", "B3", "B4", "B5", "T", "S", "B", "tiny-desk"};
}

ModelConfig preset(std::string_view name) {
  const std::array<std::size_t, 4> small{64, 128, 320, 512};
  const std::array<std::size_t, 4> large{96, 192, 384, 768};
  if (name == "B1") return pyramid("B1", Style::PVT, small, {2, 2, 4, 2}, 1000);
  if (name == "B2") return pyramid("B2", Style::PVT, small, {2, 3, 10, 3}, 1000);
  if (name == "B3") return pyramid("B3", Style::PVT, small, {3, 4, 18, 3}, 1000);
  if (name == "B4") return pyramid("B4", Style::PVT, small, {3, 8, 27, 3}, 1000);
  if (name == "B5") return pyramid("B5", Style::PVT, large, {3, 4, 24, 3}, 1000);
  if (name == "T") return pyramid("T", Style::Swin, small, {2, 2, 6, 2}, 1000);
  if (name == "S") return pyramid("S", Style::Swin, large, {3, 4, 18, 3}, 1000);
  if (name == "B") return pyramid("B", Style::Swin, large, {3, 4, 24, 3}, 1000);
  if (name == "tiny-desk")
    return pyramid("tiny-desk", Style::PVT, {16, 32, 64, 128}, {1, 1, 2, 1}, 10);
  std::string valid;
  for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw std::out_of_range("unknown preset '" + std::string(name) +
                          "'; valid presets: " + valid);
}

ModelConfig apply_overrides(ModelConfig cfg, const SpiralOverrides& o) {
  for (auto& s : cfg.stages) {
    if (o.a_max) s.a_max = *o.a_max;
    if (o.partitions) s.partitions = *o.partitions;
    if (o.period) s.period = *o.period;
  }
  if (o.rounding) cfg.rounding = *o.rounding;
  return cfg;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

void apply_stage_fields(StageConfig& s, const std::string& key, const std::string& spec) {
  std::istringstream in(spec);
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: '" + key + "' field '" + tok + "' is not name=value");
    const std::string f = tok.substr(0, eq), v = tok.substr(eq + 1);
    const std::size_t n = parse_size(key + "." + f, v);
    if (f == "stride") s.stride = n;
    else if (f == "channels") s.channels = n;
    else if (f == "expansion") s.expansion = n;
    else if (f == "depth") s.depth = n;
    else if (f == "a_max") s.a_max = n;
    else if (f == "partitions") s.partitions = n;
    else if (f == "period") s.period = n;
    else throw ConfigError("config: '" + key + "' has unknown field '" + f + "'");
  }
}

}  // namespace

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument(v);
    return std::size_t(n);
  } catch (const std::logic_error&) {
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::logic_error&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!kv.emplace(key, value).second)
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
  }
  return kv;
}

const std::vector<std::string>& model_config_keys() {
  static const std::vector<std::string> keys{
      "preset", "name",   "style",  "num_classes", "drop_path", "rounding", "a_max",
      "partitions", "period", "stage1", "stage2", "stage3", "stage4"};
  return keys;
}

ModelConfig model_config_from(const KeyValues& kv) {
  ModelConfig cfg = preset("tiny-desk");
  if (auto it = kv.find("preset"); it != kv.end()) cfg = preset(it->second);
  if (auto it = kv.find("name"); it != kv.end()) cfg.name = it->second;
  if (auto it = kv.find("style"); it != kv.end()) cfg.style = parse_style(it->second);
  if (auto it = kv.find("num_classes"); it != kv.end())
    cfg.num_classes = parse_size("num_classes", it->second);
  if (auto it = kv.find("drop_path"); it != kv.end())
    cfg.drop_path = parse_real("drop_path", it->second);
  if (auto it = kv.find("rounding"); it != kv.end())
    cfg.rounding = parse_rounding(it->second);
  SpiralOverrides o;
  if (auto it = kv.find("a_max"); it != kv.end()) o.a_max = parse_size("a_max", it->second);
  if (auto it = kv.find("partitions"); it != kv.end())
    o.partitions = parse_size("partitions", it->second);
  if (auto it = kv.find("period"); it != kv.end()) o.period = parse_size("period", it->second);
  cfg = apply_overrides(cfg, o);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string key = "stage" + std::to_string(i + 1);
    if (auto it = kv.find(key); it != kv.end()) apply_stage_fields(cfg.stages[i], key, it->second);
  }
  cfg.validate();
  return cfg;
}

std::string serialize_model_config(const ModelConfig& cfg) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", cfg.drop_path);
  os << "name = " << cfg.name << "\n"
     << "style = " << to_string(cfg.style) << "\n"
     << "num_classes = " << cfg.num_classes << "\n"
     << "drop_path = " << buf << "\n"
     << "rounding = " << to_string(cfg.rounding) << "\n";
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& s = cfg.stages[i];
    os << "stage" << i + 1 << " = stride=" << s.stride << " channels=" << s.channels
       << " expansion=" << s.expansion << " depth=" << s.depth << " a_max=" << s.a_max
       << " partitions=" << s.partitions << " period=" << s.period << "\n";
  }
  return os.str();
}

}  // namespace spiralmlp
