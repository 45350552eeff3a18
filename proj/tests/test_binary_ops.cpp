#include <doctest.h>

#include <bit>
#include <random>

#include "bcnn/binary_ops.hpp"
#include "bcnn/layers.hpp"
#include "oracles.hpp"

using namespace bcnn;

TEST_CASE("tensor construction checks extents and lengths") {
  CHECK_THROWS_AS(RealTensor(Shape{0, 1, 1, 1}), Error);
  try {
    RealTensor({1, 2, 2, 2}, std::vector<float>(7));
    FAIL("expected LengthMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LengthMismatch);
  }
  RealTensor t({2, 3, 4, 5});
  CHECK(t.size() == 120);
  t.at(1, 2, 3, 4) = 7.0f;
  CHECK(t[t.size() - 1] == 7.0f);
}

TEST_CASE("pack/unpack round trip with zero pad bits") {
  std::mt19937_64 rng(1);
  for (std::size_t c : {1, 5, 63, 64, 65, 130}) {
    const ComplexTensor t = oracle::random_signs({2, c, 3, 2}, rng);
    const BitplaneTensor p = pack(t);
    CHECK(p.words_per_pixel() == (c + 63) / 64);
    CHECK(p.re_words().size() == 2 * 3 * 2 * ((c + 63) / 64));
    CHECK(unpack(p) == t);
    const std::uint64_t pad = ~p.tail_mask();
    for (std::size_t i = p.words_per_pixel() - 1; i < p.re_words().size(); i += p.words_per_pixel()) {
      CHECK((p.re_words()[i] & pad) == 0);
      CHECK((p.im_words()[i] & pad) == 0);
    }
  }
}

TEST_CASE("pack bit convention: +1 is bit 1, channel 0 is the LSB") {
  ComplexTensor t({1, 3, 1, 1});
  t.re[0] = 1, t.re[1] = -1, t.re[2] = 1;
  t.im[0] = -1, t.im[1] = -1, t.im[2] = 1;
  const BitplaneTensor p = pack(t);
  CHECK(p.re_words()[0] == 0b101);
  CHECK(p.im_words()[0] == 0b100);
}

TEST_CASE("pack rejects entries other than +-1") {
  ComplexTensor t(RealTensor({1, 2, 1, 1}, 1.0f), RealTensor({1, 2, 1, 1}, 1.0f));
  t.im[1] = 0.0f;
  try {
    pack(t);
    FAIL("expected NonBinaryEntry");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonBinaryEntry);
  }
}

TEST_CASE("word constructor clears pad bits") {
  const BitplaneTensor p({1, 3, 1, 1}, {~0ull}, {~0ull});
  CHECK(p.re_words()[0] == 0b111);
  CHECK(unpack(p).re == RealTensor({1, 3, 1, 1}, 1.0f));
}

TEST_CASE("xnor_dot examples and properties") {
  const std::uint64_t all_ones[] = {~0ull, ~0ull};
  const std::uint64_t zeros[] = {0, 0};
  CHECK(xnor_dot(all_ones, all_ones, 70) == 70);
  CHECK(xnor_dot(all_ones, zeros, 70) == -70);
  CHECK(xnor_dot(all_ones, zeros, 0) == 0);

  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng() % 200;
    std::vector<float> a(n), b(n);
    long ref = 0;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng() & 1 ? 1.0f : -1.0f;
      b[i] = rng() & 1 ? 1.0f : -1.0f;
      ref += static_cast<long>(a[i] * b[i]);
    }
    ComplexTensor ta(RealTensor({1, n, 1, 1}, a), RealTensor({1, n, 1, 1}, a));
    ComplexTensor tb(RealTensor({1, n, 1, 1}, b), RealTensor({1, n, 1, 1}, b));
    // Garbage above bit n must not matter.
    std::vector<std::uint64_t> wa = pack(ta).re_words(), wb = pack(tb).re_words();
    if (n % 64) wa.back() |= ~0ull << (n % 64);
    const int d = xnor_dot(wa, wb, n);
    CHECK(d == ref);
    CHECK(std::abs(d) <= static_cast<int>(n));
    CHECK((d - static_cast<int>(n)) % 2 == 0);
  }
}

TEST_CASE("xnor_dot length mismatch") {
  const std::uint64_t a[] = {0, 0}, b[] = {0};
  try {
    xnor_dot(a, b, 10);
    FAIL("expected LengthMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LengthMismatch);
  }
}

TEST_CASE("binary_complex_dot follows complex multiplication") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 1 + rng() % 150;
    const ComplexTensor x = oracle::random_signs({1, n, 1, 1}, rng);
    const ComplexTensor w = oracle::random_signs({1, n, 1, 1}, rng);
    long re = 0, im = 0;
    for (std::size_t i = 0; i < n; ++i) {
      re += static_cast<long>(x.re[i] * w.re[i] - x.im[i] * w.im[i]);
      im += static_cast<long>(x.re[i] * w.im[i] + x.im[i] * w.re[i]);
    }
    const BitplaneTensor px = pack(x), pw = pack(w);
    const ComplexDot d = binary_complex_dot(px.re_words(), px.im_words(), pw.re_words(), pw.im_words(), n);
    CHECK(d.re == re);
    CHECK(d.im == im);
  }
}

TEST_CASE("deterministic binarization maps ties to +1") {
  const RealTensor x({1, 4, 1, 1}, {-0.5f, 0.0f, 0.25f, -0.0f});
  const RealTensor y = binarize_deterministic(x);
  CHECK(y == RealTensor({1, 4, 1, 1}, {-1.0f, 1.0f, 1.0f, 1.0f}));
}

TEST_CASE("stochastic binarization is seeded and follows the hard sigmoid") {
  const RealTensor x({1, 20000, 1, 1}, 0.5f);
  const RealTensor a = binarize_stochastic(x, 9), b = binarize_stochastic(x, 9);
  CHECK(a == b);
  double plus = 0;
  for (float v : a.data()) plus += v > 0;
  CHECK(plus / 20000.0 == doctest::Approx(0.75).epsilon(0.03));
  CHECK(binarize_stochastic(RealTensor({1, 100, 1, 1}, 1.0f), 1) == RealTensor({1, 100, 1, 1}, 1.0f));
  CHECK(binarize_stochastic(RealTensor({1, 100, 1, 1}, -1.0f), 1) == RealTensor({1, 100, 1, 1}, -1.0f));
  CHECK(binarize(x, BinarizeMode::deterministic()) == RealTensor({1, 20000, 1, 1}, 1.0f));
}

TEST_CASE("quadrant binarization takes each plane's sign") {
  const ComplexTensor x(RealTensor({1, 2, 1, 1}, {0.3f, -2.0f}), RealTensor({1, 2, 1, 1}, {-0.1f, 4.0f}));
  const ComplexTensor y = quadrant_binarize(x);
  CHECK(y.re == RealTensor({1, 2, 1, 1}, {1.0f, -1.0f}));
  CHECK(y.im == RealTensor({1, 2, 1, 1}, {-1.0f, 1.0f}));
}

TEST_CASE("packed convolution matches the oracle on edge geometries") {
  std::mt19937_64 rng(5);
  const ConvGeometry geos[] = {{1, 1, 1, 1, 0, 0, 64, 3}, {3, 3, 2, 2, 1, 1, 65, 4}, {5, 5, 1, 1, 2, 2, 7, 2},
                               {3, 1, 1, 2, 1, 0, 130, 5}, {2, 2, 2, 2, 0, 0, 1, 1}};
  for (const auto& g : geos) {
    const ComplexTensor x = oracle::random_signs({2, g.in_channels, 6, 7}, rng);
    const ComplexTensor w = oracle::random_signs({g.out_channels, g.in_channels, g.kh, g.kw}, rng);
    const ComplexTensor ref = oracle::naive_binary_conv(x, w, g);
    CHECK(binary_complex_conv2d(pack(x), pack(w), g) == ref);
    CHECK(binary_complex_conv2d_serial(pack(x), pack(w), g) == ref);
    // The floating reference path agrees as well.
    CHECK(complex_conv2d(x, w, g, -1.0f) == ref);
  }
}

TEST_CASE("all +1 inputs and weights, 1x1, c channels: output c - c + i(c + c)") {
  const std::size_t c = 70;
  const ComplexTensor ones(RealTensor({1, c, 1, 1}, 1.0f), RealTensor({1, c, 1, 1}, 1.0f));
  const ComplexTensor y = binary_complex_conv2d(pack(ones), pack(ones), {1, 1, 1, 1, 0, 0, c, 1});
  CHECK(y.re[0] == 0.0f);
  CHECK(y.im[0] == 2.0f * c);
}

TEST_CASE("parallelism validation") {
  const ConvGeometry g{3, 3, 1, 1, 1, 1, 100, 12};
  CHECK_NOTHROW(validate_parallelism(g, {4, 2}));
  for (Parallelism p : {Parallelism{5, 1}, Parallelism{0, 1}, Parallelism{4, 3}, Parallelism{4, 0}}) {
    try {
      validate_parallelism(g, p);
      FAIL("expected InvalidParallelism");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidParallelism);
    }
  }
}

TEST_CASE("inactive output channels are skipped and read 0") {
  std::mt19937_64 rng(6);
  const ConvGeometry g{3, 3, 1, 1, 1, 1, 10, 4};
  const ComplexTensor x = oracle::random_signs({1, 10, 5, 5}, rng);
  const ComplexTensor w = oracle::random_signs({4, 10, 3, 3}, rng);
  const std::uint8_t mask[] = {1, 0, 1, 0};
  const ComplexTensor full = binary_complex_conv2d(pack(x), pack(w), g);
  const ComplexTensor y = binary_complex_conv2d(pack(x), pack(w), g, {2, 1}, mask);
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t j = 0; j < 25; ++j) {
      CHECK(y.re.channel(0, o)[j] == (mask[o] ? full.re.channel(0, o)[j] : 0.0f));
      CHECK(y.im.channel(0, o)[j] == (mask[o] ? full.im.channel(0, o)[j] : 0.0f));
    }
}

TEST_CASE("flatten/split channel convention") {
  std::mt19937_64 rng(7);
  const ComplexTensor t = oracle::random_uniform({2, 3, 2, 2}, rng, -1, 1);
  const RealTensor f = flatten_channels(t);
  CHECK(f.shape() == Shape{2, 6, 2, 2});
  CHECK(f.at(1, 4, 1, 0) == t.im.at(1, 1, 1, 0));
  CHECK(f.at(1, 1, 1, 0) == t.re.at(1, 1, 1, 0));
  CHECK(split_channels(f) == t);
  CHECK_THROWS_AS(split_channels(RealTensor({1, 3, 1, 1})), Error);
}
