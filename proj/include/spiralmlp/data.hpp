#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spiralmlp/tensor.hpp"

namespace spiralmlp {

/// Labelled images stored as N x H x W x 3 floats (channel-last).
struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return height * width * 3; }

  template <typename T>
  Tensor<T> image(std::size_t i) const {
    const float* p = pixels.data() + i * image_size();
    return Tensor<T>({height, width, 3}, std::vector<T>(p, p + image_size()));
  }
};

/// CIFAR-10 per-channel statistics applied after scaling bytes to [0, 1]:
/// value = (byte / 255 - mean[ch]) / std[ch].
inline constexpr std::array<float, 3> kCifarMean{0.4914f, 0.4822f, 0.4465f};
inline constexpr std::array<float, 3> kCifarStd{0.2470f, 0.2435f, 0.2616f};
inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarRecordsPerBatch = 10000;

/// One CIFAR-10 binary batch. Each 3073-byte record is a label byte followed
/// by 1024 red, 1024 green, then 1024 blue bytes, each plane row-major 32x32.
/// The file size must be a positive multiple of 3073 bytes.
Dataset load_cifar10_file(const std::string& path);

enum class CifarSplit { Train, Test };

/// data_batch_1.bin .. data_batch_5.bin (Train) or test_batch.bin (Test)
/// inside `dir`. Throws std::runtime_error listing the expected filenames when
/// any is missing.
Dataset load_cifar10(const std::string& dir, CifarSplit split);

/// Desk-scale synthetic classification data, deterministic per seed.
///
/// Image i has label i mod classes. Class k draws an oriented cosine grating
/// (k + 2 cycles per image, angle pi*k/classes, random phase), a Gaussian
/// blob (random centre, class-dependent width and sign), a class colour tint
/// and N(0, 0.25^2) pixel noise. All draws come from CounterRng(seed, i), so
/// every image is independent of n and of the other images.
Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t classes,
                      std::size_t size);

}  // namespace spiralmlp
