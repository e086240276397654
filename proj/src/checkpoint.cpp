#include <fstream>
#include <sstream>
#include <stdexcept>

#include "spiralmlp/errors.hpp"
#include "spiralmlp/train.hpp"

namespace spiralmlp {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'M', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_string(std::ostream& os, const std::string& s) {
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = detail::get_le<std::uint32_t>(is);
  if (n > (1u << 24)) throw FormatError("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw FormatError("checkpoint: truncated string");
  return s;
}

void put_blob(std::ostream& os, const Tensor<double>& t, Precision p) {
  if (p == Precision::F32) write_tensor_blob(os, t.cast<float>());
  else write_tensor_blob(os, t);
}

Tensor<double> get_blob(std::istream& is, Precision p) {
  if (p == Precision::F32) return read_tensor_blob<float>(is).cast<double>();
  return read_tensor_blob<double>(is);
}

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  os.write(kMagic, sizeof(kMagic));
  detail::put_le<std::uint32_t>(os, kVersion);
  detail::put_le<std::uint32_t>(os, c.precision == Precision::F32 ? 32 : 64);
  detail::put_le<std::uint64_t>(os, c.step);
  detail::put_le<std::uint64_t>(os, c.seed);
  detail::put_le<std::uint64_t>(os, c.epoch_correct);
  detail::put_le<std::uint64_t>(os, c.epoch_seen);
  put_string(os, c.model_config);
  put_string(os, c.train_config);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.names.size()));
  for (std::size_t i = 0; i < c.names.size(); ++i) {
    put_string(os, c.names[i]);
    put_blob(os, c.values[i], c.precision);
    put_blob(os, c.m[i], c.precision);
    put_blob(os, c.v[i], c.precision);
  }
}

Checkpoint read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic))
    throw FormatError("checkpoint: bad magic header");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  const auto bits = detail::get_le<std::uint32_t>(is);
  if (bits != 32 && bits != 64)
    throw FormatError("checkpoint: unsupported element width " + std::to_string(bits));
  c.precision = bits == 32 ? Precision::F32 : Precision::F64;
  c.step = detail::get_le<std::uint64_t>(is);
  c.seed = detail::get_le<std::uint64_t>(is);
  c.epoch_correct = detail::get_le<std::uint64_t>(is);
  c.epoch_seen = detail::get_le<std::uint64_t>(is);
  c.model_config = get_string(is);
  c.train_config = get_string(is);
  const auto count = detail::get_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    c.names.push_back(get_string(is));
    c.values.push_back(get_blob(is, c.precision));
    c.m.push_back(get_blob(is, c.precision));
    c.v.push_back(get_blob(is, c.precision));
    if (c.values.back().shape() != c.m.back().shape() ||
        c.values.back().shape() != c.v.back().shape())
      throw FormatError("checkpoint: moment shapes of " + c.names.back() + " disagree");
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError("checkpoint: trailing bytes after last parameter");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ostringstream buf(std::ios::binary);
  write_checkpoint(buf, ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  const std::string bytes = buf.str();
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  try {
    return read_checkpoint(in);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace spiralmlp
