#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "spiralmlp/errors.hpp"

namespace spiralmlp {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major array; the last axis is contiguous.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_))
      throw ShapeError("tensor: " + std::to_string(data_.size()) +
                       " values do not fill shape " + to_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (numel(s) != size())
      throw ShapeError("reshape: " + to_string(shape_) + " -> " + to_string(s));
    return Tensor(std::move(s), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// A trainable value with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = true;  ///< subject to AdamW weight decay

  Parameter() = default;
  Parameter(std::string n, Shape shape, bool with_decay = true)
      : name(std::move(n)), value(shape), grad(shape), decay(with_decay) {}

  std::size_t size() const { return value.size(); }
  void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected,
                   const std::string& what) {
  if (t.shape() != expected)
    throw ShapeError(what + ": expected " + to_string(expected) + ", got " +
                     to_string(t.shape()));
}

// Tensor blob: u32 rank, u32 dims[rank], then the values as little-endian
// IEEE-754 of the element width (32-bit for float, 64-bit for double).

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i)
    b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  static_assert(std::is_unsigned_v<U>);
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U)))
    throw FormatError("unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(b[i]) << (8 * i);
  return v;
}

template <typename T>
using bits_t = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;

}  // namespace detail

template <typename T>
void write_tensor_blob(std::ostream& os, const Tensor<T>& t) {
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (T v : t.data()) detail::put_le(os, std::bit_cast<detail::bits_t<T>>(v));
}

template <typename T>
Tensor<T> read_tensor_blob(std::istream& is) {
  const auto rank = detail::get_le<std::uint32_t>(is);
  if (rank > 8) throw FormatError("tensor blob: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = detail::get_le<std::uint32_t>(is);
  const std::size_t n = numel(shape);
  if (n > (std::size_t{1} << 34)) throw FormatError("tensor blob: implausible size");
  std::vector<T> data(n);
  for (auto& v : data) v = std::bit_cast<T>(detail::get_le<detail::bits_t<T>>(is));
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace spiralmlp
