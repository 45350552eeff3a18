#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bcnn/error.hpp"

namespace bcnn {

/// NCHW extents. All four must be >= 1 for a tensor to be constructed.
struct Shape {
  std::size_t n = 1, c = 1, h = 1, w = 1;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Dense row-major NCHW tensor over scalar T.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{});
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  /// Contiguous h*w block of image n, channel c.
  std::span<T> channel(std::size_t n, std::size_t c) {
    return std::span<T>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }
  std::span<const T> channel(std::size_t n, std::size_t c) const {
    return std::span<const T>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

/// Complex tensor stored as two real planes of identical shape; c counts complex channels.
template <class T>
struct BasicComplexTensor {
  BasicTensor<T> re;
  BasicTensor<T> im;

  BasicComplexTensor() = default;
  explicit BasicComplexTensor(Shape shape) : re(shape), im(shape) {}
  BasicComplexTensor(BasicTensor<T> r, BasicTensor<T> i);

  const Shape& shape() const { return re.shape(); }
  bool operator==(const BasicComplexTensor&) const = default;
};

using RealTensor = BasicTensor<float>;
using ComplexTensor = BasicComplexTensor<float>;
using RealTensorD = BasicTensor<double>;
using ComplexTensorD = BasicComplexTensor<double>;

/// Packed {+1,-1} complex tensor.
///
/// Layout: for each (n, h, w) position the c channels are stored LSB-first in
/// ceil(c/64) consecutive 64-bit words; bit 1 encodes +1, bit 0 encodes -1.
/// Pad bits above c in the last word of a position are always zero.
class BitplaneTensor {
 public:
  BitplaneTensor() = default;
  explicit BitplaneTensor(Shape shape);
  BitplaneTensor(Shape shape, std::vector<std::uint64_t> re_words, std::vector<std::uint64_t> im_words);

  const Shape& shape() const { return shape_; }
  std::size_t words_per_pixel() const { return words_per_pixel_; }

  std::size_t word_offset(std::size_t n, std::size_t h, std::size_t w) const {
    return ((n * shape_.h + h) * shape_.w + w) * words_per_pixel_;
  }
  std::span<const std::uint64_t> re_pixel(std::size_t n, std::size_t h, std::size_t w) const {
    return std::span<const std::uint64_t>(re_).subspan(word_offset(n, h, w), words_per_pixel_);
  }
  std::span<const std::uint64_t> im_pixel(std::size_t n, std::size_t h, std::size_t w) const {
    return std::span<const std::uint64_t>(im_).subspan(word_offset(n, h, w), words_per_pixel_);
  }

  const std::vector<std::uint64_t>& re_words() const { return re_; }
  const std::vector<std::uint64_t>& im_words() const { return im_; }

  /// Mask selecting the valid channel bits of the last word of a pixel.
  std::uint64_t tail_mask() const;

  bool operator==(const BitplaneTensor&) const = default;

 private:
  Shape shape_{};
  std::size_t words_per_pixel_ = 0;
  std::vector<std::uint64_t> re_;
  std::vector<std::uint64_t> im_;
};

inline std::size_t words_for_channels(std::size_t c) { return (c + 63) / 64; }

/// Throws NonBinaryEntry when any entry of either plane is not exactly +1 or -1.
BitplaneTensor pack(const ComplexTensor& t);
ComplexTensor unpack(const BitplaneTensor& b);

/// Channels [0,c) hold real parts, [c,2c) imaginary parts.
RealTensor flatten_channels(const ComplexTensor& t);
ComplexTensor split_channels(const RealTensor& t);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template struct BasicComplexTensor<float>;
extern template struct BasicComplexTensor<double>;

}  // namespace bcnn
