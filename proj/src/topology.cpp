// Network builders. All channel counts below are complex channels: one
// complex channel carries a real and an imaginary plane, so a width of 96
// holds the same number of planes as a 192-channel real network.
//
// NIN (CIFAR-10, 3x32x32):
//   generator(3)
//   ComplexConvFP 3->96 5x5 p2, CGBN, Binarize        full precision entry
//   BConv 96->80 1x1, CGBN, Binarize
//   BConv 80->48 1x1, Pool 2/2, CGBN, Binarize        32 -> 16
//   BConv 48->96 5x5 p2, CGBN, Binarize
//   BConv 96->96 1x1, CGBN, Binarize
//   BConv 96->96 1x1, Pool 2/2, CGBN, Binarize        16 -> 8
//   BConv 96->96 3x3 p1, CGBN, Binarize
//   BConv 96->96 1x1, Pool 8/8, CGBN, Hardtanh        global
//   Flatten, FC 192->10                               full precision exit
//
// ResNet-18 (CIFAR-10):
//   generator(3), ComplexConvFP 3->32 3x3 p1, CGBN
//   stage widths 32, 64, 128, 256; two blocks per stage; the first block of
//   stages 2-4 is a ResidualBlock2 with stride 2, the rest ResidualBlock1
//   AvgPool 4/4, Hardtanh, Flatten, FC 512->10
//   Block main path: Binarize, BConv 3x3, CGBN, Binarize, BConv 3x3, CGBN.
//   ResidualBlock2 shortcut: Binarize, BConv 1x1 stride s, CGBN.

#include <cmath>
#include <random>

#include "bcnn/model.hpp"

namespace bcnn {

namespace {

using Rng = std::mt19937_64;

void fill_normal(std::span<float> v, Rng& rng, double stddev) {
  std::normal_distribution<double> d(0.0, stddev);
  for (float& x : v) x = static_cast<float>(d(rng));
}

void fill_uniform(std::span<float> v, Rng& rng, double bound) {
  std::uniform_real_distribution<double> d(-bound, bound);
  for (float& x : v) x = static_cast<float>(d(rng));
}

ConvGeometry conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1, std::size_t pad = 0) {
  return ConvGeometry{k, k, stride, stride, pad, pad, in, out};
}

LayerPtr generator(std::size_t channels, Rng& rng) {
  auto g = std::make_unique<ComplexInputGeneratorLayer>(channels);
  const double sd = 0.5 / std::sqrt(9.0 * static_cast<double>(channels));
  fill_normal(g->conv1.data(), rng, sd);
  fill_normal(g->conv2.data(), rng, sd);
  return g;
}

LayerPtr conv_fp(const ConvGeometry& geo, Rng& rng) {
  auto l = std::make_unique<ComplexConvFpLayer>(geo, false);
  const double sd = 1.0 / std::sqrt(2.0 * static_cast<double>(geo.in_channels * geo.kh * geo.kw));
  fill_normal(l->conv.weights.re.data(), rng, sd);
  fill_normal(l->conv.weights.im.data(), rng, sd);
  return l;
}

LayerPtr bconv(const ConvGeometry& geo, Rng& rng) {
  auto l = std::make_unique<BinaryComplexConvLayer>(geo);
  fill_uniform(l->latent.re.data(), rng, 0.1);
  fill_uniform(l->latent.im.data(), rng, 0.1);
  return l;
}

LayerPtr fc(std::size_t in, std::size_t out, Rng& rng) {
  auto l = std::make_unique<FcNode>(in, out);
  fill_uniform(l->fc.weights, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  return l;
}

LayerPtr cgbn(std::size_t c) { return std::make_unique<CgbnNode>(c); }
LayerPtr binarize() { return std::make_unique<ElementwiseNode>(LayerKind::Binarize); }
LayerPtr hardtanh_node() { return std::make_unique<ElementwiseNode>(LayerKind::Hardtanh); }

/// Downsampling stage: window/stride `factor`, producing extent/factor.
LayerPtr pool(PoolKind kind, std::size_t factor, std::size_t out_extent) {
  switch (kind) {
    case PoolKind::Average: return std::make_unique<PoolNode>(LayerKind::AvgPool, PoolGeometry{factor, factor});
    case PoolKind::Max: return std::make_unique<PoolNode>(LayerKind::MaxPool, PoolGeometry{factor, factor});
    case PoolKind::Spectral: return std::make_unique<SpectralPoolNode>(out_extent, out_extent);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown pool kind");
}

template <class... L>
void push(std::vector<LayerPtr>& v, L&&... layers) {
  (v.push_back(std::forward<L>(layers)), ...);
}

std::vector<LayerPtr> block_main(std::size_t in, std::size_t out, std::size_t stride, Rng& rng) {
  std::vector<LayerPtr> m;
  push(m, binarize(), bconv(conv(in, out, 3, stride, 1), rng), cgbn(out), binarize(),
       bconv(conv(out, out, 3, 1, 1), rng), cgbn(out));
  return m;
}

}  // namespace

LayerPtr make_residual_block1(std::size_t channels, std::uint64_t seed) {
  Rng rng(seed);
  return std::make_unique<ResidualBlockNode>(LayerKind::ResidualBlock1, block_main(channels, channels, 1, rng),
                                             std::vector<LayerPtr>{});
}

LayerPtr make_residual_block2(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                              std::uint64_t seed) {
  Rng rng(seed);
  auto main = block_main(in_channels, out_channels, stride, rng);
  std::vector<LayerPtr> shortcut;
  push(shortcut, binarize(), bconv(conv(in_channels, out_channels, 1, stride, 0), rng), cgbn(out_channels));
  return std::make_unique<ResidualBlockNode>(LayerKind::ResidualBlock2, std::move(main), std::move(shortcut));
}

ModelGraph build_complex_input_generator(std::size_t channels, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LayerPtr> layers;
  layers.push_back(generator(channels, rng));
  return ModelGraph("generator", {1, channels, h, w}, std::move(layers));
}

ModelGraph build_nin_bcnn(std::size_t num_classes, std::uint64_t seed, PoolKind pk) {
  Rng rng(seed);
  std::vector<LayerPtr> l;
  push(l, generator(3, rng));
  push(l, conv_fp(conv(3, 96, 5, 1, 2), rng), cgbn(96), binarize());
  push(l, bconv(conv(96, 80, 1), rng), cgbn(80), binarize());
  push(l, bconv(conv(80, 48, 1), rng), pool(pk, 2, 16), cgbn(48), binarize());
  push(l, bconv(conv(48, 96, 5, 1, 2), rng), cgbn(96), binarize());
  push(l, bconv(conv(96, 96, 1), rng), cgbn(96), binarize());
  push(l, bconv(conv(96, 96, 1), rng), pool(pk, 2, 8), cgbn(96), binarize());
  push(l, bconv(conv(96, 96, 3, 1, 1), rng), cgbn(96), binarize());
  push(l, bconv(conv(96, 96, 1), rng), pool(pk, 8, 1), cgbn(96), hardtanh_node());
  push(l, std::make_unique<FlattenNode>(), fc(2 * 96, num_classes, rng));
  ModelGraph m("nin", {1, 3, 32, 32}, std::move(l));
  m.validate();
  return m;
}

ModelGraph build_resnet18_bcnn(std::size_t num_classes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LayerPtr> l;
  push(l, generator(3, rng), conv_fp(conv(3, 32, 3, 1, 1), rng), cgbn(32));
  const std::size_t widths[] = {32, 64, 128, 256};
  std::size_t in = 32;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    const std::size_t out = widths[stage];
    if (stage == 0) {
      l.push_back(make_residual_block1(out, rng()));
    } else {
      l.push_back(make_residual_block2(in, out, 2, rng()));
    }
    l.push_back(make_residual_block1(out, rng()));
    in = out;
  }
  push(l, std::make_unique<PoolNode>(LayerKind::AvgPool, PoolGeometry{4, 4}), hardtanh_node(),
       std::make_unique<FlattenNode>(), fc(2 * 256, num_classes, rng));
  ModelGraph m("resnet18", {1, 3, 32, 32}, std::move(l));
  m.validate();
  return m;
}

ModelGraph build_tiny_bcnn(const TinyBcnnSpec& spec, std::uint64_t seed) {
  if (spec.height % 2 || spec.width_px % 2 || spec.width == 0)
    throw Error(ErrorCode::InvalidConfig, "tiny model needs even spatial extents and a nonzero width");
  Rng rng(seed);
  const std::size_t c = spec.width;
  std::vector<LayerPtr> l;
  push(l, generator(spec.in_channels, rng), conv_fp(conv(spec.in_channels, c, 3, 1, 1), rng), cgbn(c));
  for (std::size_t i = 0; i < spec.binary_layers; ++i)
    push(l, binarize(), bconv(conv(c, c, 3, 1, 1), rng), cgbn(c));
  LayerPtr p;
  if (spec.pool == PoolKind::Spectral) {
    p = std::make_unique<SpectralPoolNode>(spec.height / 2, spec.width_px / 2);
  } else {
    p = pool(spec.pool, 2, 0);
  }
  push(l, std::move(p), hardtanh_node(), std::make_unique<FlattenNode>(),
       fc(2 * c * (spec.height / 2) * (spec.width_px / 2), spec.num_classes, rng));
  ModelGraph m("tiny", {1, spec.in_channels, spec.height, spec.width_px}, std::move(l));
  m.validate();
  return m;
}

}  // namespace bcnn
