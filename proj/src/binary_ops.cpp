#include "bcnn/binary_ops.hpp"

#include <algorithm>
#include <bit>
#include <random>
#include <vector>

namespace bcnn {

RealTensor binarize_deterministic(const RealTensor& x) {
  RealTensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sign_binarize(x[i]);
  return out;
}

RealTensor binarize_stochastic(const RealTensor& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  RealTensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = uniform(rng) < hard_sigmoid(x[i]) ? 1.0f : -1.0f;
  return out;
}

RealTensor binarize(const RealTensor& x, const BinarizeMode& mode) {
  return mode.kind == BinarizeMode::Kind::Stochastic ? binarize_stochastic(x, mode.seed)
                                                     : binarize_deterministic(x);
}

ComplexTensor quadrant_binarize(const ComplexTensor& x) {
  return ComplexTensor(binarize_deterministic(x.re), binarize_deterministic(x.im));
}

std::int32_t xnor_dot(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b, std::size_t n) {
  const std::size_t words = words_for_channels(n);
  if (a.size() < words || b.size() < words || a.size() != b.size())
    throw Error(ErrorCode::LengthMismatch, "operands of " + std::to_string(a.size()) + " and " +
                                               std::to_string(b.size()) + " words for n=" + std::to_string(n));
  if (n == 0) return 0;
  std::int64_t diff = 0;
  for (std::size_t i = 0; i + 1 < words; ++i) diff += std::popcount(a[i] ^ b[i]);
  const std::size_t rem = n % 64;
  const std::uint64_t mask = rem == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << rem) - 1;
  diff += std::popcount((a[words - 1] ^ b[words - 1]) & mask);
  return static_cast<std::int32_t>(static_cast<std::int64_t>(n) - 2 * diff);
}

ComplexDot binary_complex_dot(std::span<const std::uint64_t> x_re, std::span<const std::uint64_t> x_im,
                              std::span<const std::uint64_t> w_re, std::span<const std::uint64_t> w_im,
                              std::size_t n) {
  return {xnor_dot(x_re, w_re, n) - xnor_dot(x_im, w_im, n), xnor_dot(x_re, w_im, n) + xnor_dot(x_im, w_re, n)};
}

std::size_t ConvGeometry::out_h(std::size_t h) const {
  if (sh == 0 || kh == 0 || h + 2 * ph < kh)
    throw Error(ErrorCode::ShapeMismatch, "kernel height " + std::to_string(kh) + " does not fit input " +
                                              std::to_string(h) + " with padding " + std::to_string(ph));
  return (h + 2 * ph - kh) / sh + 1;
}

std::size_t ConvGeometry::out_w(std::size_t w) const {
  if (sw == 0 || kw == 0 || w + 2 * pw < kw)
    throw Error(ErrorCode::ShapeMismatch, "kernel width " + std::to_string(kw) + " does not fit input " +
                                              std::to_string(w) + " with padding " + std::to_string(pw));
  return (w + 2 * pw - kw) / sw + 1;
}

void ConvGeometry::validate() const {
  if (kh == 0 || kw == 0 || sh == 0 || sw == 0 || in_channels == 0 || out_channels == 0)
    throw Error(ErrorCode::ShapeMismatch, "conv geometry has a zero extent");
}

void validate_parallelism(const ConvGeometry& g, Parallelism par) {
  const std::size_t words = words_for_channels(g.in_channels);
  if (par.p_out == 0 || g.out_channels % par.p_out != 0)
    throw Error(ErrorCode::InvalidParallelism, "p_out=" + std::to_string(par.p_out) +
                                                   " must divide out_channels=" + std::to_string(g.out_channels));
  if (par.p_in == 0 || par.p_in > words)
    throw Error(ErrorCode::InvalidParallelism,
                "p_in=" + std::to_string(par.p_in) + " outside [1, " + std::to_string(words) + "]");
}

namespace {

void check_operands(const BitplaneTensor& x, const BitplaneTensor& w, const ConvGeometry& g,
                    ChannelMask active_out) {
  g.validate();
  if (x.shape().c != g.in_channels)
    throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.shape().c) +
                                              " channels, geometry expects " + std::to_string(g.in_channels));
  const Shape expect{g.out_channels, g.in_channels, g.kh, g.kw};
  if (!(w.shape() == expect))
    throw Error(ErrorCode::ShapeMismatch, "weights " + to_string(w.shape()) + ", expected " + to_string(expect));
  if (!active_out.empty() && active_out.size() != g.out_channels)
    throw Error(ErrorCode::ShapeMismatch, "channel mask length " + std::to_string(active_out.size()));
}

// Popcount accumulators for one output channel: x_r^w_r, x_i^w_i, x_r^w_i, x_i^w_r.
struct Counts {
  std::int64_t rr = 0, ii = 0, ri = 0, ir = 0;
};

ComplexTensor conv_packed(const BitplaneTensor& x, const BitplaneTensor& w, const ConvGeometry& g,
                          Parallelism par, ChannelMask active_out, bool parallel) {
  check_operands(x, w, g, active_out);
  validate_parallelism(g, par);

  const Shape xs = x.shape();
  const std::size_t oh = g.out_h(xs.h), ow = g.out_w(xs.w);
  const std::size_t words = x.words_per_pixel();
  const std::uint64_t tail = x.tail_mask();
  const std::int64_t taps_elems = static_cast<std::int64_t>(g.in_channels * g.kh * g.kw);
  const std::vector<std::uint64_t> pad_pixel(words, 0);  // -1 on both planes

  ComplexTensor out({xs.n, g.out_channels, oh, ow});
  const std::size_t blocks = g.out_channels / par.p_out;
  const std::int64_t total = static_cast<std::int64_t>(xs.n * blocks);

#pragma omp parallel for schedule(static) if (parallel)
  for (std::int64_t job = 0; job < total; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / blocks;
    const std::size_t o0 = (static_cast<std::size_t>(job) % blocks) * par.p_out;
    std::vector<Counts> acc(par.p_out);

    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::fill(acc.begin(), acc.end(), Counts{});
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.sh + ky) - static_cast<std::ptrdiff_t>(g.ph);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * g.sw + kx) - static_cast<std::ptrdiff_t>(g.pw);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(xs.h) &&
                                ix < static_cast<std::ptrdiff_t>(xs.w);
            const std::uint64_t* xr = inside ? x.re_pixel(n, iy, ix).data() : pad_pixel.data();
            const std::uint64_t* xi = inside ? x.im_pixel(n, iy, ix).data() : pad_pixel.data();

            for (std::size_t wb = 0; wb < words; wb += par.p_in) {
              const std::size_t wend = std::min(words, wb + par.p_in);
              for (std::size_t po = 0; po < par.p_out; ++po) {
                const std::size_t o = o0 + po;
                if (!active_out.empty() && !active_out[o]) continue;
                const std::uint64_t* wr = w.re_pixel(o, ky, kx).data();
                const std::uint64_t* wi = w.im_pixel(o, ky, kx).data();
                Counts& c = acc[po];
                for (std::size_t k = wb; k < wend; ++k) {
                  const std::uint64_t m = (k + 1 == words) ? tail : ~std::uint64_t{0};
                  c.rr += std::popcount((xr[k] ^ wr[k]) & m);
                  c.ii += std::popcount((xi[k] ^ wi[k]) & m);
                  c.ri += std::popcount((xr[k] ^ wi[k]) & m);
                  c.ir += std::popcount((xi[k] ^ wr[k]) & m);
                }
              }
            }
          }
        }
        for (std::size_t po = 0; po < par.p_out; ++po) {
          const std::size_t o = o0 + po;
          if (!active_out.empty() && !active_out[o]) {
            out.re.at(n, o, oy, ox) = 0.0f;
            out.im.at(n, o, oy, ox) = 0.0f;
            continue;
          }
          // (N - 2rr) - (N - 2ii) and (N - 2ri) + (N - 2ir)
          const Counts& c = acc[po];
          out.re.at(n, o, oy, ox) = static_cast<float>(2 * (c.ii - c.rr));
          out.im.at(n, o, oy, ox) = static_cast<float>(2 * taps_elems - 2 * (c.ri + c.ir));
        }
      }
  }
  return out;
}

}  // namespace

ComplexTensor binary_complex_conv2d(const BitplaneTensor& x, const BitplaneTensor& w, const ConvGeometry& g,
                                    Parallelism par, ChannelMask active_out) {
  return conv_packed(x, w, g, par, active_out, true);
}

ComplexTensor binary_complex_conv2d_serial(const BitplaneTensor& x, const BitplaneTensor& w,
                                           const ConvGeometry& g, Parallelism par, ChannelMask active_out) {
  return conv_packed(x, w, g, par, active_out, false);
}

}  // namespace bcnn
