#include "bcnn/model.hpp"

#include <algorithm>

namespace bcnn {

const Shape& shape_of(const Activation& a) {
  return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, a);
}

const RealTensor& as_real(const Activation& a, const char* who) {
  if (const auto* t = std::get_if<RealTensor>(&a)) return *t;
  throw Error(ErrorCode::ShapeMismatch, std::string(who) + " expects a real tensor");
}

const ComplexTensor& as_complex(const Activation& a, const char* who) {
  if (const auto* t = std::get_if<ComplexTensor>(&a)) return *t;
  throw Error(ErrorCode::ShapeMismatch, std::string(who) + " expects a complex tensor");
}

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::ComplexInputGenerator: return "ComplexInputGenerator";
    case LayerKind::ComplexConvFP: return "ComplexConvFP";
    case LayerKind::BinaryComplexConv: return "BinaryComplexConv";
    case LayerKind::CGBN: return "CGBN";
    case LayerKind::RealBN: return "RealBN";
    case LayerKind::AvgPool: return "AvgPool";
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::SpectralPool: return "SpectralPool";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Hardtanh: return "Hardtanh";
    case LayerKind::Binarize: return "Binarize";
    case LayerKind::FC: return "FC";
    case LayerKind::ResidualBlock1: return "ResidualBlock1";
    case LayerKind::ResidualBlock2: return "ResidualBlock2";
    case LayerKind::Flatten: return "Flatten";
  }
  return "?";
}

namespace {

void copy_into(std::span<float> dst, std::span<const float> src) {
  if (dst.size() != src.size()) throw Error(ErrorCode::ShapeMismatch, "gradient buffer size");
  std::copy(src.begin(), src.end(), dst.begin());
}

RealTensor add(const RealTensor& a, const RealTensor& b) {
  if (!(a.shape() == b.shape()))
    throw Error(ErrorCode::ShapeMismatch, "add " + to_string(a.shape()) + " + " + to_string(b.shape()));
  RealTensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Activation add(const Activation& a, const Activation& b) {
  if (a.index() != b.index()) throw Error(ErrorCode::ShapeMismatch, "adding real and complex activations");
  if (const auto* ra = std::get_if<RealTensor>(&a)) return add(*ra, std::get<RealTensor>(b));
  const auto& ca = std::get<ComplexTensor>(a);
  const auto& cb = std::get<ComplexTensor>(b);
  return ComplexTensor(add(ca.re, cb.re), add(ca.im, cb.im));
}

void write_geometry(ByteWriter& w, const ConvGeometry& g) {
  for (std::size_t v : {g.kh, g.kw, g.sh, g.sw, g.ph, g.pw, g.in_channels, g.out_channels})
    w.u32(static_cast<std::uint32_t>(v));
}

ConvGeometry read_geometry(ByteReader& r) {
  ConvGeometry g;
  g.kh = r.u32();
  g.kw = r.u32();
  g.sh = r.u32();
  g.sw = r.u32();
  g.ph = r.u32();
  g.pw = r.u32();
  g.in_channels = r.u32();
  g.out_channels = r.u32();
  g.validate();
  return g;
}

std::string geometry_string(const ConvGeometry& g) {
  return std::to_string(g.in_channels) + "->" + std::to_string(g.out_channels) + " k" + std::to_string(g.kh) +
         "x" + std::to_string(g.kw) + " s" + std::to_string(g.sh) + " p" + std::to_string(g.ph);
}

Shape weight_shape(const ConvGeometry& g) { return {g.out_channels, g.in_channels, g.kh, g.kw}; }

void write_floats(ByteWriter& w, const std::vector<float>& v) { w.f32s(v); }
void read_floats(ByteReader& r, std::vector<float>& v) { r.f32s(v); }

}  // namespace

// ---------------------------------------------------------------------------

ComplexInputGeneratorLayer::ComplexInputGeneratorLayer(std::size_t channels) {
  geometry_ = ConvGeometry{3, 3, 1, 1, 1, 1, channels, channels};
  conv1 = RealTensor(weight_shape(geometry_));
  conv2 = RealTensor(weight_shape(geometry_));
  bias1.assign(channels, 0.0f);
  bias2.assign(channels, 0.0f);
  grad_conv1_ = conv1;
  grad_conv2_ = conv2;
  grad_bias1_ = bias1;
  grad_bias2_ = bias2;
}

std::string ComplexInputGeneratorLayer::describe() const {
  return "ComplexInputGenerator c=" + std::to_string(channels());
}

namespace {

RealTensor conv_bias(const RealTensor& x, const RealTensor& w, const std::vector<float>& b, const ConvGeometry& g) {
  RealTensor y = conv2d_real(x, w, g);
  const Shape s = y.shape();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (float& v : y.channel(n, c)) v += b[c];
  return y;
}

std::vector<float> channel_sums(const RealTensor& g) {
  const Shape s = g.shape();
  std::vector<double> acc(s.c, 0.0);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (float v : g.channel(n, c)) acc[c] += v;
  return std::vector<float>(acc.begin(), acc.end());
}

}  // namespace

Activation ComplexInputGeneratorLayer::infer(const Activation& xa, const InferOptions&) const {
  const RealTensor& x = as_real(xa, "ComplexInputGenerator");
  RealTensor sum = add(relu(conv_bias(x, conv1, bias1, geometry_)), x);
  return ComplexTensor(x, conv_bias(sum, conv2, bias2, geometry_));
}

Activation ComplexInputGeneratorLayer::forward_train(const Activation& xa) {
  cache_x_ = as_real(xa, "ComplexInputGenerator");
  cache_pre_ = conv_bias(cache_x_, conv1, bias1, geometry_);
  cache_sum_ = add(relu(cache_pre_), cache_x_);
  return ComplexTensor(cache_x_, conv_bias(cache_sum_, conv2, bias2, geometry_));
}

Activation ComplexInputGeneratorLayer::backward(const Activation& ga) {
  const ComplexTensor& g = as_complex(ga, "ComplexInputGenerator backward");
  const Shape xs = cache_x_.shape();
  copy_into(grad_conv2_.data(), conv2d_real_backward_weight(cache_sum_, g.im, geometry_).data());
  copy_into(grad_bias2_, channel_sums(g.im));
  const RealTensor g_sum = conv2d_real_backward_input(g.im, conv2, geometry_, xs);
  const RealTensor g_pre = gate_backward(cache_pre_, g_sum, 0.0f, std::numeric_limits<float>::infinity());
  copy_into(grad_conv1_.data(), conv2d_real_backward_weight(cache_x_, g_pre, geometry_).data());
  copy_into(grad_bias1_, channel_sums(g_pre));
  RealTensor gx = add(g.re, g_sum);
  return add(gx, conv2d_real_backward_input(g_pre, conv1, geometry_, xs));
}

void ComplexInputGeneratorLayer::params(std::vector<ParamRef>& out) {
  out.push_back({"gen.conv1", conv1.data(), grad_conv1_.data(), false});
  out.push_back({"gen.bias1", bias1, grad_bias1_, false});
  out.push_back({"gen.conv2", conv2.data(), grad_conv2_.data(), false});
  out.push_back({"gen.bias2", bias2, grad_bias2_, false});
}

void ComplexInputGeneratorLayer::write_topology(ByteWriter& w) const {
  w.u8(static_cast<std::uint8_t>(kind()));
  w.u32(static_cast<std::uint32_t>(channels()));
}

void ComplexInputGeneratorLayer::write_payload(ByteWriter& w) const {
  w.f32s(conv1.data());
  write_floats(w, bias1);
  w.f32s(conv2.data());
  write_floats(w, bias2);
}

void ComplexInputGeneratorLayer::read_payload(ByteReader& r) {
  r.f32s(conv1.data());
  read_floats(r, bias1);
  r.f32s(conv2.data());
  read_floats(r, bias2);
}

// ---------------------------------------------------------------------------

ComplexConvFpLayer::ComplexConvFpLayer(const ConvGeometry& g, bool bias) {
  g.validate();
  conv.geometry = g;
  conv.weights = ComplexTensor(weight_shape(g));
  conv.has_bias = bias;
  if (bias) {
    conv.bias_re.assign(g.out_channels, 0.0f);
    conv.bias_im.assign(g.out_channels, 0.0f);
  }
  grad_ = conv;
}

std::string ComplexConvFpLayer::describe() const {
  return "ComplexConvFP " + geometry_string(conv.geometry) + (conv.has_bias ? " +bias" : "");
}

Activation ComplexConvFpLayer::infer(const Activation& x, const InferOptions&) const {
  return complex_conv2d_fp(as_complex(x, "ComplexConvFP"), conv);
}

Activation ComplexConvFpLayer::forward_train(const Activation& x) {
  cache_x_ = as_complex(x, "ComplexConvFP");
  return complex_conv2d_fp(cache_x_, conv);
}

Activation ComplexConvFpLayer::backward(const Activation& ga) {
  const ComplexTensor& g = as_complex(ga, "ComplexConvFP backward");
  ComplexConvGrads r = complex_conv2d_backward(cache_x_, conv.weights, conv.geometry, g, 0.0f);
  copy_into(grad_.weights.re.data(), r.weights.re.data());
  copy_into(grad_.weights.im.data(), r.weights.im.data());
  if (conv.has_bias) {
    copy_into(grad_.bias_re, channel_sums(g.re));
    copy_into(grad_.bias_im, channel_sums(g.im));
  }
  return std::move(r.input);
}

Shape ComplexConvFpLayer::out_shape(const Shape& in) const {
  return {in.n, conv.geometry.out_channels, conv.geometry.out_h(in.h), conv.geometry.out_w(in.w)};
}

void ComplexConvFpLayer::params(std::vector<ParamRef>& out) {
  out.push_back({"convfp.re", conv.weights.re.data(), grad_.weights.re.data(), false});
  out.push_back({"convfp.im", conv.weights.im.data(), grad_.weights.im.data(), false});
  if (conv.has_bias) {
    out.push_back({"convfp.bias_re", conv.bias_re, grad_.bias_re, false});
    out.push_back({"convfp.bias_im", conv.bias_im, grad_.bias_im, false});
  }
}

void ComplexConvFpLayer::write_topology(ByteWriter& w) const {
  w.u8(static_cast<std::uint8_t>(kind()));
  write_geometry(w, conv.geometry);
  w.u8(conv.has_bias ? 1 : 0);
}

void ComplexConvFpLayer::write_payload(ByteWriter& w) const {
  w.f32s(conv.weights.re.data());
  w.f32s(conv.weights.im.data());
  if (conv.has_bias) {
    write_floats(w, conv.bias_re);
    write_floats(w, conv.bias_im);
  }
}

void ComplexConvFpLayer::read_payload(ByteReader& r) {
  r.f32s(conv.weights.re.data());
  r.f32s(conv.weights.im.data());
  if (conv.has_bias) {
    read_floats(r, conv.bias_re);
    read_floats(r, conv.bias_im);
  }
}

// ---------------------------------------------------------------------------

BinaryComplexConvLayer::BinaryComplexConvLayer(const ConvGeometry& g) : geometry_(g) {
  g.validate();
  latent = ComplexTensor(weight_shape(g));
  grad_ = latent;
  active_.assign(g.out_channels, 1);
}

std::string BinaryComplexConvLayer::describe() const {
  return "BinaryComplexConv " + geometry_string(geometry_) + " active=" + std::to_string(active_count()) + "/" +
         std::to_string(geometry_.out_channels);
}

BitplaneTensor BinaryComplexConvLayer::packed_weights() const { return pack(quadrant_binarize(latent)); }

void BinaryComplexConvLayer::set_active_channels(std::vector<std::uint8_t> active) {
  if (active.size() != geometry_.out_channels)
    throw Error(ErrorCode::ShapeMismatch, "active mask length " + std::to_string(active.size()));
  active_ = std::move(active);
  for (std::size_t o = 0; o < geometry_.out_channels; ++o) {
    if (active_[o]) continue;
    for (std::size_t c = 0; c < geometry_.in_channels; ++c) {
      std::fill(latent.re.channel(o, c).begin(), latent.re.channel(o, c).end(), 0.0f);
      std::fill(latent.im.channel(o, c).begin(), latent.im.channel(o, c).end(), 0.0f);
    }
  }
}

std::size_t BinaryComplexConvLayer::active_count() const {
  return static_cast<std::size_t>(std::count_if(active_.begin(), active_.end(), [](auto a) { return a != 0; }));
}

namespace {

void require_binary(const ComplexTensor& x) {
  for (std::span<const float> plane : {x.re.data(), x.im.data()})
    for (float v : plane)
      if (v != 1.0f && v != -1.0f)
        throw Error(ErrorCode::NonBinaryEntry, "binarized convolution received a non +-1 activation");
}

}  // namespace

ComplexTensor BinaryComplexConvLayer::run(const ComplexTensor& x, const InferOptions& opt) const {
  if (opt.packed) {
    return binary_complex_conv2d(pack(x), packed_weights(), geometry_, opt.parallelism, active_);
  }
  if (opt.check_binary) require_binary(x);
  ComplexTensor y = complex_conv2d(x, quadrant_binarize(latent), geometry_, -1.0f);
  const Shape s = y.shape();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < s.c; ++o)
      if (!active_[o]) {
        std::fill(y.re.channel(n, o).begin(), y.re.channel(n, o).end(), 0.0f);
        std::fill(y.im.channel(n, o).begin(), y.im.channel(n, o).end(), 0.0f);
      }
  return y;
}

Activation BinaryComplexConvLayer::infer(const Activation& x, const InferOptions& opt) const {
  return run(as_complex(x, "BinaryComplexConv"), opt);
}

Activation BinaryComplexConvLayer::forward_train(const Activation& x) {
  cache_x_ = as_complex(x, "BinaryComplexConv");
  cache_wb_ = quadrant_binarize(latent);
  return binary_complex_conv2d(pack(cache_x_), pack(cache_wb_), geometry_, {}, active_);
}

Activation BinaryComplexConvLayer::backward(const Activation& ga) {
  ComplexTensor g = as_complex(ga, "BinaryComplexConv backward");
  const Shape s = g.shape();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < s.c; ++o)
      if (!active_[o]) {
        std::fill(g.re.channel(n, o).begin(), g.re.channel(n, o).end(), 0.0f);
        std::fill(g.im.channel(n, o).begin(), g.im.channel(n, o).end(), 0.0f);
      }
  ComplexConvGrads r = complex_conv2d_backward(cache_x_, cache_wb_, geometry_, g, -1.0f);
  copy_into(grad_.re.data(), r.weights.re.data());
  copy_into(grad_.im.data(), r.weights.im.data());
  return std::move(r.input);
}

Shape BinaryComplexConvLayer::out_shape(const Shape& in) const {
  return {in.n, geometry_.out_channels, geometry_.out_h(in.h), geometry_.out_w(in.w)};
}

void BinaryComplexConvLayer::params(std::vector<ParamRef>& out) {
  out.push_back({"bconv.latent_re", latent.re.data(), grad_.re.data(), true});
  out.push_back({"bconv.latent_im", latent.im.data(), grad_.im.data(), true});
}

void BinaryComplexConvLayer::write_topology(ByteWriter& w) const {
  w.u8(static_cast<std::uint8_t>(kind()));
  write_geometry(w, geometry_);
}

void BinaryComplexConvLayer::write_payload(ByteWriter& w) const {
  const BitplaneTensor packed = packed_weights();
  w.u64s(packed.re_words());
  w.u64s(packed.im_words());
  w.bytes(active_);
  w.f32s(latent.re.data());
  w.f32s(latent.im.data());
}

void BinaryComplexConvLayer::read_payload(ByteReader& r) {
  const Shape ws = weight_shape(geometry_);
  const std::size_t words = ws.n * ws.h * ws.w * words_for_channels(ws.c);
  std::vector<std::uint64_t> re(words), im(words);
  r.u64s(re);
  r.u64s(im);
  auto mask = r.take(geometry_.out_channels);
  active_.assign(mask.begin(), mask.end());
  r.f32s(latent.re.data());
  r.f32s(latent.im.data());
  if (!(BitplaneTensor(ws, std::move(re), std::move(im)) == packed_weights()))
    throw Error(ErrorCode::CorruptRecord, "packed weights disagree with latent weights");
}

// ---------------------------------------------------------------------------

std::string CgbnNode::describe() const { return "CGBN c=" + std::to_string(bn.channels()); }

Activation CgbnNode::infer(const Activation& x, const InferOptions&) const {
  return cgbn_infer(as_complex(x, "CGBN"), bn);
}

Activation CgbnNode::forward_train(const Activation& x) {
  if (grads_.gamma_re.size() != bn.channels()) {
    grads_.gamma_re.assign(bn.channels(), 0.0f);
    grads_.gamma_im = grads_.beta_re = grads_.beta_im = grads_.gamma_re;
  }
  return cgbn_forward(as_complex(x, "CGBN"), bn, true, &cache_);
}

Activation CgbnNode::backward(const Activation& g) {
  return cgbn_backward(as_complex(g, "CGBN backward"), bn, cache_, grads_);
}

void CgbnNode::params(std::vector<ParamRef>& out) {
  if (grads_.gamma_re.size() != bn.channels()) {
    grads_.gamma_re.assign(bn.channels(), 0.0f);
    grads_.gamma_im = grads_.beta_re = grads_.beta_im = grads_.gamma_re;
  }
  out.push_back({"cgbn.gamma_re", bn.gamma_re, grads_.gamma_re, false});
  out.push_back({"cgbn.gamma_im", bn.gamma_im, grads_.gamma_im, false});
  out.push_back({"cgbn.beta_re", bn.beta_re, grads_.beta_re, false});
  out.push_back({"cgbn.beta_im", bn.beta_im, grads_.beta_im, false});
}

void CgbnNode::write_topology(ByteWriter& w) const {
  w.u8(static_cast<std::uint8_t>(kind()));
  w.u32(static_cast<std::uint32_t>(bn.channels()));
}

void CgbnNode::write_payload(ByteWriter& w) const {
  w.f32(bn.eps);
  w.f32(bn.momentum);
  for (const auto* v : {&bn.gamma_re, &bn.gamma_im, &bn.beta_re, &bn.beta_im, &bn.running_mean_re,
                        &bn.running_mean_im, &bn.running_var_re, &bn.running_var_im})
    write_floats(w, *v);
}

void CgbnNode::read_payload(ByteReader& r) {
  bn.eps = r.f32();
  bn.momentum = r.f32();
  for (auto* v : {&bn.gamma_re, &bn.gamma_im, &bn.beta_re, &bn.beta_im, &bn.running_mean_re, &bn.running_mean_im,
                  &bn.running_var_re, &bn.running_var_im})
    read_floats(r, *v);
}

// ---------------------------------------------------------------------------

std::string RealBnNode::describe() const { return "RealBN c=" + std::to_string(bn.channels()); }

Activation RealBnNode::infer(const Activation& x, const InferOptions&) const {
  if (const auto* c = std::get_if<ComplexTensor>(&x)) return split_channels(real_bn_infer(flatten_channels(*c), bn));
  return real_bn_infer(std::get<RealTensor>(x), bn);
}

Activation RealBnNode::forward_train(const Activation& x) {
  if (grads_.gamma.size() != bn.channels()) grads_.gamma = grads_.beta = std::vector<float>(bn.channels(), 0.0f);
  complex_input_ = std::holds_alternative<ComplexTensor>(x);
  if (complex_input_)
    return split_channels(real_bn_forward(flatten_channels(std::get<ComplexTensor>(x)), bn, true, &cache_));
  return real_bn_forward(std::get<RealTensor>(x), bn, true, &cache_);
}

Activation RealBnNode::backward(const Activation& g) {
  if (complex_input_)
    return split_channels(real_bn_backward(flatten_channels(as_complex(g, "RealBN backward")), bn, cache_, grads_));
  return real_bn_backward(as_real(g, "RealBN backward"), bn, cache_, grads_);
}

void RealBnNode::params(std::vector<ParamRef>& out) {
  if (grads_.gamma.size() != bn.channels()) grads_.gamma = grads_.beta = std::vector<float>(bn.channels(), 0.0f);
  out.push_back({"rbn.gamma", bn.gamma, grads_.gamma, false});
  out.push_back({"rbn.beta", bn.beta, grads_.beta, false});
}

void RealBnNode::write_topology(ByteWriter& w) const {
  w.u8(static_cast<std::uint8_t>(kind()));
  w.u32(static_cast<std::uint32_t>(bn.channels()));
}

void RealBnNode::write_payload(ByteWriter& w) const {
  w.f32(bn.eps);
  w.f32(bn.momentum);
  for (const auto* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) write_floats(w, *v);
}

void RealBnNode::read_payload(ByteReader& r) {
  bn.eps = r.f32();
  bn.momentum = r.f32();
  for (auto* v : {&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var}) read_floats(r, *v);
}

// ---------------------------------------------------------------------------

PoolNode::PoolNode(LayerKind kind, PoolGeometry geometry) : kind_(kind), geometry_(geometry) {
  if (kind != LayerKind::AvgPool && kind != LayerKind::MaxPool)
    throw Error(ErrorCode::InvalidConfig, "PoolNode kind must be AvgPool or MaxPool");
  if (geometry.window == 0 || geometry.stride == 0) throw Error(ErrorCode::InvalidConfig, "zero pool geometry");
}

std::string PoolNode::describe() const {
  return std::string(to_string(kind_)) + " " + std::to_string(geometry_.window) + "/" +
         std::to_string(geometry_.stride);
}

Activation PoolNode::infer(const Activation& x, const InferOptions&) const {
  const bool avg = kind_ == LayerKind::AvgPool;
  if (const auto* c = std::get_if<ComplexTensor>(&x)) return avg ? avg_pool(*c, geometry_) : max_pool(*c, geometry_);
  const auto& r = std::get<RealTensor>(x);
  return avg ? avg_pool(r, geometry_) : max_pool(r, geometry_);
}

Activation PoolNode::forward_train(const Activation& x) {
  cache_x_ = x;
  return infer(x, {});
}

Activation PoolNode::backward(const Activation& g) {
  const bool avg = kind_ == LayerKind::AvgPool;
  auto plane = [&](const RealTensor& x, const RealTensor& gy) {
    return avg ? avg_pool_backward(gy, geometry_, x.shape()) : max_pool_backward(x, gy, geometry_);
  };
  if (const auto* cx = std::get_if<ComplexTensor>(&cache_x_)) {
    const auto& cg = as_complex(g, "pool backward");
    return ComplexTensor(plane(cx->re, cg.re), plane(cx->im, cg.im));
  }
  return plane(std::get<RealTensor>(cache_x_), as_real(g, "pool backward"));
}

Shape PoolNode::out_shape(const Shape& in) const {
  return {in.n, in.c, geometry_.out_extent(in.h), geometry_.out_extent(in.w)};
}

void PoolNode::write_topology(ByteWriter& w) const {
  w.u8(static_cast<std::uint8_t>(kind_));
  w.u32(static_cast<std::uint32_t>(geometry_.window));
  w.u32(static_cast<std::uint32_t>(geometry_.stride));
}

// ---------------------------------------------------------------------------

std::string SpectralPoolNode::describe() const {
  return "SpectralPool ->" + std::to_string(out_h_) + "x" + std::to_string(out_w_);
}

Activation SpectralPoolNode::infer(const Activation& x, const InferOptions&) const {
  return spectral_pool(as_complex(x, "SpectralPool"), out_h_, out_w_);
}

Activation SpectralPoolNode::forward_train(const Activation& x) {
  in_shape_ = shape_of(x);
  return infer(x, {});
}

Activation SpectralPoolNode::backward(const Activation& g) {
  return spectral_pool_backward(as_complex(g, "SpectralPool backward"), in_shape_.h, in_shape_.w);
}

Shape SpectralPoolNode::out_shape(const Shape& in) const { return {in.n, in.c, out_h_, out_w_}; }

void SpectralPoolNode::write_topology(ByteWriter& w) const {
  w.u8(static_cast<std::uint8_t>(kind()));
  w.u32(static_cast<std::uint32_t>(out_h_));
  w.u32(static_cast<std::uint32_t>(out_w_));
}

// ---------------------------------------------------------------------------

ElementwiseNode::ElementwiseNode(LayerKind kind) : kind_(kind) {
  if (kind != LayerKind::ReLU && kind != LayerKind::Hardtanh && kind != LayerKind::Binarize)
    throw Error(ErrorCode::InvalidConfig, "not an elementwise kind");
}

Activation ElementwiseNode::infer(const Activation& x, const InferOptions&) const {
  auto apply = [&](const RealTensor& t) {
    switch (kind_) {
      case LayerKind::ReLU: return relu(t);
      case LayerKind::Hardtanh: return hardtanh(t);
      default: return binarize_deterministic(t);
    }
  };
  if (const auto* c = std::get_if<ComplexTensor>(&x)) return ComplexTensor(apply(c->re), apply(c->im));
  return apply(std::get<RealTensor>(x));
}

Activation ElementwiseNode::forward_train(const Activation& x) {
  cache_x_ = x;
  return infer(x, {});
}

Activation ElementwiseNode::backward(const Activation& g) {
  const float lo = kind_ == LayerKind::ReLU ? 0.0f : -1.0f;
  const float hi = kind_ == LayerKind::ReLU ? std::numeric_limits<float>::infinity() : 1.0f;
  if (const auto* cx = std::get_if<ComplexTensor>(&cache_x_)) {
    const auto& cg = as_complex(g, "elementwise backward");
    return ComplexTensor(gate_backward(cx->re, cg.re, lo, hi), gate_backward(cx->im, cg.im, lo, hi));
  }
  return gate_backward(std::get<RealTensor>(cache_x_), as_real(g, "elementwise backward"), lo, hi);
}

void ElementwiseNode::write_topology(ByteWriter& w) const { w.u8(static_cast<std::uint8_t>(kind_)); }

// ---------------------------------------------------------------------------

Activation FlattenNode::infer(const Activation& x, const InferOptions&) const {
  if (const auto* c = std::get_if<ComplexTensor>(&x)) {
    RealTensor flat = flatten_channels(*c);
    const Shape s = flat.shape();
    return RealTensor({s.n, s.c * s.h * s.w, 1, 1}, std::move(flat.storage()));
  }
  const auto& r = std::get<RealTensor>(x);
  const Shape s = r.shape();
  return RealTensor({s.n, s.c * s.h * s.w, 1, 1}, r.storage());
}

Activation FlattenNode::forward_train(const Activation& x) {
  in_shape_ = shape_of(x);
  complex_input_ = std::holds_alternative<ComplexTensor>(x);
  return infer(x, {});
}

Activation FlattenNode::backward(const Activation& g) {
  const RealTensor& gr = as_real(g, "Flatten backward");
  if (complex_input_)
    return split_channels(RealTensor({in_shape_.n, 2 * in_shape_.c, in_shape_.h, in_shape_.w}, gr.storage()));
  return RealTensor(in_shape_, gr.storage());
}

// Shapes carry no real/complex flag; layer stacks only flatten complex data.
Shape FlattenNode::out_shape(const Shape& in) const { return {in.n, 2 * in.c * in.h * in.w, 1, 1}; }

void FlattenNode::write_topology(ByteWriter& w) const { w.u8(static_cast<std::uint8_t>(kind())); }

// ---------------------------------------------------------------------------

FcNode::FcNode(std::size_t in_features, std::size_t out_features) {
  if (in_features == 0 || out_features == 0) throw Error(ErrorCode::InvalidConfig, "empty FC layer");
  fc.in_features = in_features;
  fc.out_features = out_features;
  fc.weights.assign(in_features * out_features, 0.0f);
  fc.bias.assign(out_features, 0.0f);
  grad_ = fc;
}

std::string FcNode::describe() const {
  return "FC " + std::to_string(fc.in_features) + "->" + std::to_string(fc.out_features);
}

Activation FcNode::infer(const Activation& x, const InferOptions&) const {
  return fully_connected(as_real(x, "FC"), fc);
}

Activation FcNode::forward_train(const Activation& x) {
  cache_x_ = as_real(x, "FC");
  return fully_connected(cache_x_, fc);
}

Activation FcNode::backward(const Activation& g) {
  FcGrads r = fully_connected_backward(cache_x_, fc, as_real(g, "FC backward"));
  copy_into(grad_.weights, r.weights);
  copy_into(grad_.bias, r.bias);
  return std::move(r.input);
}

Shape FcNode::out_shape(const Shape& in) const { return {in.n, fc.out_features, 1, 1}; }

void FcNode::params(std::vector<ParamRef>& out) {
  out.push_back({"fc.weights", fc.weights, grad_.weights, false});
  out.push_back({"fc.bias", fc.bias, grad_.bias, false});
}

void FcNode::write_topology(ByteWriter& w) const {
  w.u8(static_cast<std::uint8_t>(kind()));
  w.u32(static_cast<std::uint32_t>(fc.in_features));
  w.u32(static_cast<std::uint32_t>(fc.out_features));
}

void FcNode::write_payload(ByteWriter& w) const {
  write_floats(w, fc.weights);
  write_floats(w, fc.bias);
}

void FcNode::read_payload(ByteReader& r) {
  read_floats(r, fc.weights);
  read_floats(r, fc.bias);
}

// ---------------------------------------------------------------------------

ResidualBlockNode::ResidualBlockNode(LayerKind kind, std::vector<LayerPtr> main, std::vector<LayerPtr> shortcut)
    : kind_(kind), main_(std::move(main)), shortcut_(std::move(shortcut)) {
  if (kind != LayerKind::ResidualBlock1 && kind != LayerKind::ResidualBlock2)
    throw Error(ErrorCode::InvalidConfig, "not a residual kind");
  if (kind == LayerKind::ResidualBlock1 && !shortcut_.empty())
    throw Error(ErrorCode::InvalidConfig, "ResidualBlock1 has an identity shortcut");
  if (kind == LayerKind::ResidualBlock2 && shortcut_.empty())
    throw Error(ErrorCode::InvalidConfig, "ResidualBlock2 needs a shortcut path");
}

ResidualBlockNode::ResidualBlockNode(const ResidualBlockNode& other) : Layer(other), kind_(other.kind_) {
  for (const auto& l : other.main_) main_.push_back(l->clone());
  for (const auto& l : other.shortcut_) shortcut_.push_back(l->clone());
}

std::string ResidualBlockNode::describe() const {
  return std::string(to_string(kind_)) + " main=" + std::to_string(main_.size()) +
         " shortcut=" + std::to_string(shortcut_.size());
}

Activation ResidualBlockNode::infer(const Activation& x, const InferOptions& opt) const {
  Activation a = x;
  for (const auto& l : main_) a = l->infer(a, opt);
  if (shortcut_.empty()) return add(a, x);
  Activation b = x;
  for (const auto& l : shortcut_) b = l->infer(b, opt);
  return add(a, b);
}

Activation ResidualBlockNode::forward_train(const Activation& x) {
  Activation a = x;
  for (auto& l : main_) a = l->forward_train(a);
  if (shortcut_.empty()) return add(a, x);
  Activation b = x;
  for (auto& l : shortcut_) b = l->forward_train(b);
  return add(a, b);
}

Activation ResidualBlockNode::backward(const Activation& g) {
  Activation gm = g;
  for (auto it = main_.rbegin(); it != main_.rend(); ++it) gm = (*it)->backward(gm);
  if (shortcut_.empty()) return add(gm, g);
  Activation gs = g;
  for (auto it = shortcut_.rbegin(); it != shortcut_.rend(); ++it) gs = (*it)->backward(gs);
  return add(gm, gs);
}

Shape ResidualBlockNode::out_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : main_) s = l->out_shape(s);
  return s;
}

void ResidualBlockNode::params(std::vector<ParamRef>& out) {
  for (auto& l : main_) l->params(out);
  for (auto& l : shortcut_) l->params(out);
}

std::vector<Layer*> ResidualBlockNode::children() {
  std::vector<Layer*> out;
  for (auto& l : main_) out.push_back(l.get());
  for (auto& l : shortcut_) out.push_back(l.get());
  return out;
}

std::vector<const Layer*> ResidualBlockNode::children() const {
  std::vector<const Layer*> out;
  for (const auto& l : main_) out.push_back(l.get());
  for (const auto& l : shortcut_) out.push_back(l.get());
  return out;
}

void ResidualBlockNode::write_topology(ByteWriter& w) const {
  w.u8(static_cast<std::uint8_t>(kind_));
  w.u32(static_cast<std::uint32_t>(main_.size()));
  for (const auto& l : main_) l->write_topology(w);
  w.u32(static_cast<std::uint32_t>(shortcut_.size()));
  for (const auto& l : shortcut_) l->write_topology(w);
}

void ResidualBlockNode::write_payload(ByteWriter& w) const {
  for (const auto* l : children()) l->write_payload(w);
}

void ResidualBlockNode::read_payload(ByteReader& r) {
  for (auto* l : children()) l->read_payload(r);
}

LayerPtr read_layer_topology(ByteReader& r) {
  const std::uint8_t raw = r.u8();
  if (raw > static_cast<std::uint8_t>(LayerKind::Flatten))
    throw Error(ErrorCode::CorruptRecord, "unknown layer kind " + std::to_string(raw));
  const auto kind = static_cast<LayerKind>(raw);
  switch (kind) {
    case LayerKind::ComplexInputGenerator: return std::make_unique<ComplexInputGeneratorLayer>(r.u32());
    case LayerKind::ComplexConvFP: {
      const ConvGeometry g = read_geometry(r);
      return std::make_unique<ComplexConvFpLayer>(g, r.u8() != 0);
    }
    case LayerKind::BinaryComplexConv: return std::make_unique<BinaryComplexConvLayer>(read_geometry(r));
    case LayerKind::CGBN: return std::make_unique<CgbnNode>(r.u32());
    case LayerKind::RealBN: return std::make_unique<RealBnNode>(r.u32());
    case LayerKind::AvgPool:
    case LayerKind::MaxPool: {
      PoolGeometry p;
      p.window = r.u32();
      p.stride = r.u32();
      return std::make_unique<PoolNode>(kind, p);
    }
    case LayerKind::SpectralPool: {
      const std::size_t h = r.u32();
      return std::make_unique<SpectralPoolNode>(h, r.u32());
    }
    case LayerKind::ReLU:
    case LayerKind::Hardtanh:
    case LayerKind::Binarize: return std::make_unique<ElementwiseNode>(kind);
    case LayerKind::FC: {
      const std::size_t in = r.u32();
      return std::make_unique<FcNode>(in, r.u32());
    }
    case LayerKind::ResidualBlock1:
    case LayerKind::ResidualBlock2: {
      std::vector<LayerPtr> main, shortcut;
      for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) main.push_back(read_layer_topology(r));
      for (std::uint32_t i = 0, n = r.u32(); i < n; ++i) shortcut.push_back(read_layer_topology(r));
      return std::make_unique<ResidualBlockNode>(kind, std::move(main), std::move(shortcut));
    }
    case LayerKind::Flatten: return std::make_unique<FlattenNode>();
  }
  throw Error(ErrorCode::CorruptRecord, "unhandled layer kind");
}

// ---------------------------------------------------------------------------

ModelGraph::ModelGraph(std::string name, Shape input, std::vector<LayerPtr> layers)
    : name_(std::move(name)), input_(input), layers_(std::move(layers)) {
  input_.n = 1;
}

ModelGraph::ModelGraph(const ModelGraph& other) : name_(other.name_), input_(other.input_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

ModelGraph& ModelGraph::operator=(const ModelGraph& other) {
  if (this != &other) {
    ModelGraph copy(other);
    *this = std::move(copy);
  }
  return *this;
}

namespace {

void check_input(const Shape& expected, const Activation& x) {
  const Shape s = shape_of(x);
  if (s.c != expected.c || s.h != expected.h || s.w != expected.w)
    throw Error(ErrorCode::ShapeMismatch, "model input " + to_string(s) + ", expected per-image " + to_string(expected));
}

}  // namespace

Activation ModelGraph::infer(const Activation& x, const InferOptions& opt) const {
  check_input(input_, x);
  Activation a = x;
  for (const auto& l : layers_) a = l->infer(a, opt);
  return a;
}

Activation ModelGraph::forward_train(const Activation& x) {
  check_input(input_, x);
  Activation a = x;
  for (auto& l : layers_) a = l->forward_train(a);
  return a;
}

Activation ModelGraph::backward(const Activation& g) {
  Activation a = g;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) a = (*it)->backward(a);
  return a;
}

std::vector<ParamRef> ModelGraph::params() {
  std::vector<ParamRef> out;
  for (auto& l : layers_) l->params(out);
  return out;
}

namespace {

template <class L>
void collect_flat(L* layer, std::vector<L*>& out) {
  out.push_back(layer);
  for (auto* c : layer->children()) collect_flat(c, out);
}

bool is_compute(LayerKind k) {
  return k == LayerKind::ComplexConvFP || k == LayerKind::BinaryComplexConv || k == LayerKind::FC;
}

void check_binarize_feeds(const std::vector<const Layer*>& seq) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i]->kind() != LayerKind::BinaryComplexConv) continue;
    if (i == 0 || seq[i - 1]->kind() != LayerKind::Binarize)
      throw Error(ErrorCode::InvalidConfig, "BinaryComplexConv at position " + std::to_string(i) +
                                                " is not preceded by Binarize");
  }
}

void check_sequences(const std::vector<const Layer*>& seq) {
  check_binarize_feeds(seq);
  for (const Layer* l : seq) {
    if (auto* block = dynamic_cast<const ResidualBlockNode*>(l)) {
      std::vector<const Layer*> main, shortcut;
      for (const auto& m : block->main_path()) main.push_back(m.get());
      for (const auto& s : block->shortcut_path()) shortcut.push_back(s.get());
      check_sequences(main);
      check_sequences(shortcut);
    }
  }
}

}  // namespace

std::vector<Layer*> ModelGraph::flat_layers() {
  std::vector<Layer*> out;
  for (auto& l : layers_) collect_flat<Layer>(l.get(), out);
  return out;
}

std::vector<const Layer*> ModelGraph::flat_layers() const {
  std::vector<const Layer*> out;
  for (const auto& l : layers_) collect_flat<const Layer>(l.get(), out);
  return out;
}

std::vector<BinaryComplexConvLayer*> ModelGraph::binary_convs() {
  std::vector<BinaryComplexConvLayer*> out;
  for (Layer* l : flat_layers())
    if (auto* b = dynamic_cast<BinaryComplexConvLayer*>(l)) out.push_back(b);
  return out;
}

Shape ModelGraph::output_shape(std::size_t n) const {
  Shape s = input_;
  s.n = n;
  for (const auto& l : layers_) s = l->out_shape(s);
  return s;
}

void ModelGraph::validate() const {
  std::vector<const Layer*> compute;
  for (const Layer* l : flat_layers())
    if (is_compute(l->kind())) compute.push_back(l);
  if (compute.empty()) throw Error(ErrorCode::InvalidConfig, "model has no compute layers");
  if (compute.front()->kind() == LayerKind::BinaryComplexConv || compute.back()->kind() == LayerKind::BinaryComplexConv)
    throw Error(ErrorCode::InvalidConfig, "first and last compute layers must be full precision");
  std::vector<const Layer*> top;
  for (const auto& l : layers_) top.push_back(l.get());
  check_sequences(top);
  output_shape();
}

RealTensor forward(const ModelGraph& model, const RealTensor& batch, const InferOptions& opt) {
  Activation out = model.infer(batch, opt);
  return as_real(out, "model output");
}

}  // namespace bcnn
