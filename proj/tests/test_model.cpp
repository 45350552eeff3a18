#include <doctest.h>

#include <random>

#include "bcnn/model.hpp"
#include "oracles.hpp"

using namespace bcnn;

namespace {

RealTensor random_images(std::size_t n, Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  RealTensor t({n, s.c, s.h, s.w});
  for (float& v : t.data()) v = d(rng);
  return t;
}

std::size_t count_kind(const std::vector<LayerPtr>& layers, LayerKind k) {
  std::size_t n = 0;
  for (const auto& l : layers) n += l->kind() == k;
  return n;
}

}  // namespace

TEST_CASE("builders produce valid graphs with 10-way outputs") {
  const ModelGraph nin = build_nin_bcnn();
  CHECK_NOTHROW(nin.validate());
  CHECK(nin.output_shape(3) == Shape{3, 10, 1, 1});
  CHECK(nin.layers().front()->kind() == LayerKind::ComplexInputGenerator);
  CHECK(count_kind(nin.layers(), LayerKind::BinaryComplexConv) == 7);

  const ModelGraph res = build_resnet18_bcnn();
  CHECK(res.output_shape() == Shape{1, 10, 1, 1});
  CHECK(build_tiny_bcnn({}).output_shape() == Shape{1, 2, 1, 1});
  CHECK(build_nin_bcnn(10, 1, PoolKind::Spectral).output_shape() == Shape{1, 10, 1, 1});
  CHECK(build_nin_bcnn(10, 1, PoolKind::Max).output_shape() == Shape{1, 10, 1, 1});
}

TEST_CASE("ResNet-18 has 18 weight layers on its main path") {
  const ModelGraph res = build_resnet18_bcnn();
  std::size_t weight_layers = count_kind(res.layers(), LayerKind::ComplexConvFP) + count_kind(res.layers(), LayerKind::FC);
  std::size_t blocks = 0, downsample = 0;
  for (const auto& l : res.layers()) {
    if (auto* b = dynamic_cast<const ResidualBlockNode*>(l.get())) {
      ++blocks;
      weight_layers += count_kind(b->main_path(), LayerKind::BinaryComplexConv);
      downsample += b->kind() == LayerKind::ResidualBlock2;
      CHECK(b->shortcut_path().size() == (b->kind() == LayerKind::ResidualBlock2 ? 3u : 0u));
    }
  }
  CHECK(blocks == 8);
  CHECK(downsample == 3);
  CHECK(weight_layers == 18);
}

TEST_CASE("residual block with zeroed final CGBN is the identity") {
  LayerPtr block = make_residual_block1(4, 3);
  auto& rb = dynamic_cast<ResidualBlockNode&>(*block);
  auto& bn = dynamic_cast<CgbnNode&>(*rb.main_path().back()).bn;
  std::fill(bn.gamma_re.begin(), bn.gamma_re.end(), 0.0f);
  std::fill(bn.gamma_im.begin(), bn.gamma_im.end(), 0.0f);
  std::mt19937_64 rng(4);
  const ComplexTensor x = oracle::random_uniform({2, 4, 5, 5}, rng, -2, 2);
  const ComplexTensor y = std::get<ComplexTensor>(block->infer(x, {}));
  CHECK(y == x);
}

TEST_CASE("downsampling block changes extents") {
  LayerPtr block = make_residual_block2(4, 8, 2, 5);
  CHECK(block->out_shape({1, 4, 8, 8}) == Shape{1, 8, 4, 4});
  std::mt19937_64 rng(5);
  const ComplexTensor x = oracle::random_uniform({1, 4, 8, 8}, rng, -1, 1);
  CHECK(shape_of(block->infer(x, {})) == Shape{1, 8, 4, 4});
}

TEST_CASE("packed and unpacked inference agree") {
  const ModelGraph nin = build_nin_bcnn(10, 2);
  const RealTensor x = random_images(2, nin.input_shape(), 6);
  const RealTensor a = forward(nin, x, {true, {}, true});
  const RealTensor b = forward(nin, x, {false, {}, true});
  CHECK(a == b);
  const RealTensor c = forward(nin, x, {true, {4, 1}, false});
  CHECK(a == c);

  const ModelGraph res = build_resnet18_bcnn(10, 2);
  const RealTensor xr = random_images(1, res.input_shape(), 7);
  CHECK(forward(res, xr, {true, {}, false}) == forward(res, xr, {false, {}, true}));
}

TEST_CASE("binary convolution rejects non-binary activations when checking") {
  BinaryComplexConvLayer conv({3, 3, 1, 1, 1, 1, 2, 2});
  std::mt19937_64 rng(8);
  const ComplexTensor x = oracle::random_uniform({1, 2, 4, 4}, rng, -1, 1);
  for (bool packed : {true, false}) {
    try {
      conv.infer(x, {packed, {}, true});
      FAIL("expected NonBinaryEntry");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonBinaryEntry);
    }
  }
}

TEST_CASE("validate rejects a binarized conv without Binarize before it") {
  auto make = [](bool with_binarize) {
    std::vector<LayerPtr> l;
    l.push_back(std::make_unique<ComplexInputGeneratorLayer>(3));
    l.push_back(std::make_unique<ComplexConvFpLayer>(ConvGeometry{3, 3, 1, 1, 1, 1, 3, 4}, false));
    l.push_back(std::make_unique<CgbnNode>(4));
    if (with_binarize) l.push_back(std::make_unique<ElementwiseNode>(LayerKind::Binarize));
    l.push_back(std::make_unique<BinaryComplexConvLayer>(ConvGeometry{3, 3, 1, 1, 1, 1, 4, 4}));
    l.push_back(std::make_unique<CgbnNode>(4));
    l.push_back(std::make_unique<FlattenNode>());
    l.push_back(std::make_unique<FcNode>(2 * 4 * 4 * 4, 3));
    ModelGraph m("t", {1, 3, 4, 4}, std::move(l));
    m.validate();
    return m;
  };
  CHECK_NOTHROW(make(true));
  try {
    make(false);
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
  }
}

TEST_CASE("validate rejects a binarized first or last layer") {
  std::vector<LayerPtr> l;
  l.push_back(std::make_unique<ElementwiseNode>(LayerKind::Binarize));
  l.push_back(std::make_unique<BinaryComplexConvLayer>(ConvGeometry{1, 1, 1, 1, 0, 0, 3, 2}));
  CHECK_THROWS_AS(ModelGraph("t", {1, 3, 4, 4}, std::move(l)).validate(), Error);
}

TEST_CASE("generator keeps the image as the real plane") {
  const ModelGraph g = build_complex_input_generator(3, 8, 8, 9);
  const RealTensor x = random_images(2, g.input_shape(), 10);
  const ComplexTensor y = std::get<ComplexTensor>(g.infer(x));
  CHECK(y.re == x);
  bool nonzero = false;
  for (float v : y.im.data()) nonzero |= v != 0.0f;
  CHECK(nonzero);
}

TEST_CASE("inactive channels output zero and cloning copies the mask") {
  BinaryComplexConvLayer conv({1, 1, 1, 1, 0, 0, 3, 4});
  conv.set_active_channels({1, 0, 1, 0});
  CHECK(conv.active_count() == 2);
  LayerPtr copy = conv.clone();
  std::mt19937_64 rng(11);
  const ComplexTensor x = oracle::random_signs({1, 3, 2, 2}, rng);
  const ComplexTensor y = std::get<ComplexTensor>(copy->infer(x, {}));
  for (float v : y.re.channel(0, 1)) CHECK(v == 0.0f);
  for (float v : y.im.channel(0, 3)) CHECK(v == 0.0f);
  CHECK_THROWS_AS(conv.set_active_channels({1, 1}), Error);
}
