#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "bcnn/tensor.hpp"

namespace bcnn {

/// Deterministic: sign with ties to +1. Stochastic: +1 with probability
/// hard_sigmoid(x) = clamp((x+1)/2, 0, 1), drawn from a generator seeded by `seed`.
struct BinarizeMode {
  enum class Kind { Deterministic, Stochastic };
  Kind kind = Kind::Deterministic;
  std::uint64_t seed = 0;

  static BinarizeMode deterministic() { return {}; }
  static BinarizeMode stochastic(std::uint64_t seed) { return {Kind::Stochastic, seed}; }
};

inline float sign_binarize(float x) { return x >= 0.0f ? 1.0f : -1.0f; }
inline double hard_sigmoid(double x) { return x <= -1.0 ? 0.0 : (x >= 1.0 ? 1.0 : (x + 1.0) / 2.0); }

RealTensor binarize_deterministic(const RealTensor& x);
RealTensor binarize_stochastic(const RealTensor& x, std::uint64_t seed);
RealTensor binarize(const RealTensor& x, const BinarizeMode& mode);

/// Quadrant binarization: sign of each plane independently.
ComplexTensor quadrant_binarize(const ComplexTensor& x);

/// Sum of a_i*b_i over the first n encoded {+1,-1} elements, computed as
/// n - 2*popcount(a XOR b) with bits beyond n masked off.
std::int32_t xnor_dot(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b, std::size_t n);

struct ComplexDot {
  std::int32_t re = 0;
  std::int32_t im = 0;
  bool operator==(const ComplexDot&) const = default;
};

/// y = sum x_k * w_k under complex multiplication:
///   re = <x_r,w_r> - <x_i,w_i>,  im = <x_r,w_i> + <x_i,w_r>
ComplexDot binary_complex_dot(std::span<const std::uint64_t> x_re, std::span<const std::uint64_t> x_im,
                              std::span<const std::uint64_t> w_re, std::span<const std::uint64_t> w_im,
                              std::size_t n);

struct ConvGeometry {
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  std::size_t ph = 0, pw = 0;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  /// Throws ShapeMismatch when the window does not fit.
  std::size_t out_h(std::size_t h) const;
  std::size_t out_w(std::size_t w) const;
  void validate() const;
  bool operator==(const ConvGeometry&) const = default;
};

/// Two-level unroll of the packed convolution: p_out output channels and
/// p_in input words are processed per inner block.
struct Parallelism {
  std::size_t p_out = 1;
  std::size_t p_in = 1;
};

/// Output channels flagged false in `active_out` are skipped and produce 0.
/// An empty span means every channel is active.
using ChannelMask = std::span<const std::uint8_t>;

/// Packed XOR/popcount convolution, bias free, padding with -1 on both
/// planes. x is (n, in_c, h, w); w is (out_c, in_c, kh, kw). The result is
/// integer valued and independent of `par`. OpenMP parallel over images and
/// output-channel blocks.
ComplexTensor binary_complex_conv2d(const BitplaneTensor& x, const BitplaneTensor& w, const ConvGeometry& g,
                                    Parallelism par = {}, ChannelMask active_out = {});

/// Same loop nest executed on the calling thread only.
ComplexTensor binary_complex_conv2d_serial(const BitplaneTensor& x, const BitplaneTensor& w,
                                           const ConvGeometry& g, Parallelism par = {},
                                           ChannelMask active_out = {});

/// Throws InvalidParallelism unless p_out divides out_channels and
/// 1 <= p_in <= ceil(in_channels/64).
void validate_parallelism(const ConvGeometry& g, Parallelism par);

}  // namespace bcnn
