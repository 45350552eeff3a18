#include "bcnn/tensor.hpp"

#include <algorithm>
#include <utility>

namespace bcnn {

std::string to_string(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w);
}

namespace {

void check_extents(const Shape& s) {
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0)
    throw Error(ErrorCode::ShapeMismatch, "zero extent in shape " + to_string(s));
}

}  // namespace

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape) {
  check_extents(shape);
  data_.assign(shape.size(), fill);
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  check_extents(shape);
  if (data_.size() != shape.size())
    throw Error(ErrorCode::LengthMismatch,
                "data length " + std::to_string(data_.size()) + " for shape " + to_string(shape));
}

template <class T>
BasicComplexTensor<T>::BasicComplexTensor(BasicTensor<T> r, BasicTensor<T> i)
    : re(std::move(r)), im(std::move(i)) {
  if (!(re.shape() == im.shape()))
    throw Error(ErrorCode::ShapeMismatch,
                "planes " + to_string(re.shape()) + " vs " + to_string(im.shape()));
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template struct BasicComplexTensor<float>;
template struct BasicComplexTensor<double>;

BitplaneTensor::BitplaneTensor(Shape shape)
    : shape_(shape), words_per_pixel_(words_for_channels(shape.c)) {
  check_extents(shape);
  const std::size_t words = shape.n * shape.h * shape.w * words_per_pixel_;
  re_.assign(words, 0);
  im_.assign(words, 0);
}

BitplaneTensor::BitplaneTensor(Shape shape, std::vector<std::uint64_t> re_words,
                               std::vector<std::uint64_t> im_words)
    : shape_(shape),
      words_per_pixel_(words_for_channels(shape.c)),
      re_(std::move(re_words)),
      im_(std::move(im_words)) {
  check_extents(shape);
  const std::size_t words = shape.n * shape.h * shape.w * words_per_pixel_;
  if (re_.size() != words || im_.size() != words)
    throw Error(ErrorCode::LengthMismatch, "expected " + std::to_string(words) + " words per plane");
  // Consumers mask pad bits anyway; clearing them keeps buffers comparable.
  const std::uint64_t mask = tail_mask();
  for (std::size_t i = words_per_pixel_ - 1; i < words; i += words_per_pixel_) {
    re_[i] &= mask;
    im_[i] &= mask;
  }
}

std::uint64_t BitplaneTensor::tail_mask() const {
  const std::size_t rem = shape_.c % 64;
  return rem == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << rem) - 1;
}

BitplaneTensor pack(const ComplexTensor& t) {
  const Shape s = t.shape();
  const std::size_t wpp = words_for_channels(s.c);
  std::vector<std::uint64_t> re(s.n * s.h * s.w * wpp, 0);
  std::vector<std::uint64_t> im(re.size(), 0);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          const float vr = t.re.at(n, c, y, x);
          const float vi = t.im.at(n, c, y, x);
          if ((vr != 1.0f && vr != -1.0f) || (vi != 1.0f && vi != -1.0f))
            throw Error(ErrorCode::NonBinaryEntry,
                        "entry (" + std::to_string(n) + "," + std::to_string(c) + "," +
                            std::to_string(y) + "," + std::to_string(x) + ") is not +-1");
          const std::size_t word = ((n * s.h + y) * s.w + x) * wpp + c / 64;
          const std::uint64_t bit = std::uint64_t{1} << (c % 64);
          if (vr > 0) re[word] |= bit;
          if (vi > 0) im[word] |= bit;
        }
  return BitplaneTensor(s, std::move(re), std::move(im));
}

ComplexTensor unpack(const BitplaneTensor& b) {
  const Shape s = b.shape();
  ComplexTensor t(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        auto re = b.re_pixel(n, y, x);
        auto im = b.im_pixel(n, y, x);
        for (std::size_t c = 0; c < s.c; ++c) {
          const std::uint64_t bit = std::uint64_t{1} << (c % 64);
          t.re.at(n, c, y, x) = (re[c / 64] & bit) ? 1.0f : -1.0f;
          t.im.at(n, c, y, x) = (im[c / 64] & bit) ? 1.0f : -1.0f;
        }
      }
  return t;
}

RealTensor flatten_channels(const ComplexTensor& t) {
  const Shape s = t.shape();
  RealTensor out({s.n, 2 * s.c, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      auto re = t.re.channel(n, c);
      auto im = t.im.channel(n, c);
      std::copy(re.begin(), re.end(), out.channel(n, c).begin());
      std::copy(im.begin(), im.end(), out.channel(n, s.c + c).begin());
    }
  return out;
}

ComplexTensor split_channels(const RealTensor& t) {
  const Shape s = t.shape();
  if (s.c % 2 != 0)
    throw Error(ErrorCode::ShapeMismatch, "odd channel count " + std::to_string(s.c) + " cannot split");
  const std::size_t half = s.c / 2;
  ComplexTensor out({s.n, half, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < half; ++c) {
      auto re = t.channel(n, c);
      auto im = t.channel(n, half + c);
      std::copy(re.begin(), re.end(), out.re.channel(n, c).begin());
      std::copy(im.begin(), im.end(), out.im.channel(n, c).begin());
    }
  return out;
}

}  // namespace bcnn
