#include "spiralmlp/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <stdexcept>

#include "spiralmlp/errors.hpp"
#include "spiralmlp/rng.hpp"

namespace spiralmlp {

Dataset load_cifar10_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open CIFAR-10 batch " + path);
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0)
    throw FormatError(path + ": " + std::to_string(bytes.size()) +
                      " bytes is not a whole number of " +
                      std::to_string(kCifarRecordBytes) + "-byte records (a standard batch is " +
                      std::to_string(kCifarRecordBytes * kCifarRecordsPerBatch) + " bytes)");
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset ds;
  ds.height = ds.width = 32;
  ds.labels.resize(n);
  ds.pixels.resize(n * 32 * 32 * 3);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) throw FormatError(path + ": record " + std::to_string(r) + " has label " +
                                      std::to_string(int(rec[0])) + " outside [0, 9]");
    ds.labels[r] = rec[0];
    float* img = ds.pixels.data() + r * 3072;
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < 1024; ++p)
        img[p * 3 + ch] = (float(rec[1 + ch * 1024 + p]) / 255.0f - kCifarMean[ch]) / kCifarStd[ch];
  }
  return ds;
}

Dataset load_cifar10(const std::string& dir, CifarSplit split) {
  std::vector<std::string> names;
  if (split == CifarSplit::Train)
    for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
  else
    names.push_back("test_batch.bin");
  std::string missing;
  for (const auto& n : names)
    if (!std::filesystem::exists(std::filesystem::path(dir) / n)) missing += " " + n;
  if (!missing.empty()) {
    std::string expected;
    for (const auto& n : names) expected += " " + n;
    throw std::runtime_error("CIFAR-10 directory " + dir + " is missing:" + missing +
                             " (expected files:" + expected + ")");
  }
  Dataset all;
  for (const auto& n : names) {
    Dataset part = load_cifar10_file((std::filesystem::path(dir) / n).string());
    all.height = part.height;
    all.width = part.width;
    all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
  }
  return all;
}

Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes,
                      std::size_t size) {
  if (classes < 2) throw std::invalid_argument("synth_dataset: classes must be >= 2");
  if (size < 1) throw std::invalid_argument("synth_dataset: size must be >= 1");
  constexpr double pi = std::numbers::pi;
  Dataset ds;
  ds.height = ds.width = size;
  ds.labels.resize(n);
  ds.pixels.resize(n * size * size * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % classes;
    ds.labels[i] = int(k);
    CounterRng rng(seed, i);
    const double freq = 2.0 + double(k);
    const double angle = pi * double(k) / double(classes);
    const double phase = 2.0 * pi * rng.uniform01();
    const double cy = 0.25 + 0.5 * rng.uniform01(), cx = 0.25 + 0.5 * rng.uniform01();
    const double sigma = 0.08 + 0.06 * double(k % 3);
    const double blob_sign = (k % 2 == 0) ? 1.0 : -1.0;
    double tint[3];
    for (std::size_t ch = 0; ch < 3; ++ch)
      tint[ch] = 0.4 * std::cos(2.0 * pi * (double(k) / double(classes) + double(ch) / 3.0));
    float* img = ds.pixels.data() + i * size * size * 3;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double u = (double(y) + 0.5) / double(size), v = (double(x) + 0.5) / double(size);
        const double grating =
            0.6 * std::cos(2.0 * pi * freq * (u * std::cos(angle) + v * std::sin(angle)) + phase);
        const double d2 = (u - cy) * (u - cy) + (v - cx) * (v - cx);
        const double blob = 0.8 * blob_sign * std::exp(-d2 / (2.0 * sigma * sigma));
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double noise = 0.25 * rng.normal();
          img[(y * size + x) * 3 + ch] = float(grating + blob + tint[ch] + noise);
        }
      }
    }
  }
  return ds;
}

}  // namespace spiralmlp
