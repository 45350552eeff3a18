#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "bcnn/binary_ops.hpp"
#include "bcnn/bytes.hpp"
#include "bcnn/layers.hpp"
#include "bcnn/tensor.hpp"

namespace bcnn {

/// Data flowing between layers: real before the complex-input generator and
/// after Flatten, complex everywhere in between.
using Activation = std::variant<RealTensor, ComplexTensor>;

const Shape& shape_of(const Activation& a);
const RealTensor& as_real(const Activation& a, const char* who);
const ComplexTensor& as_complex(const Activation& a, const char* who);

enum class LayerKind : std::uint8_t {
  ComplexInputGenerator = 0,
  ComplexConvFP = 1,
  BinaryComplexConv = 2,
  CGBN = 3,
  RealBN = 4,
  AvgPool = 5,
  MaxPool = 6,
  SpectralPool = 7,
  ReLU = 8,
  Hardtanh = 9,
  Binarize = 10,
  FC = 11,
  ResidualBlock1 = 12,
  ResidualBlock2 = 13,
  Flatten = 14,
};

const char* to_string(LayerKind k);

/// A trainable tensor exposed to optimizers. `binarized` marks latent
/// weights whose forward use is sign(w); their gradient is STE-gated.
struct ParamRef {
  std::string name;
  std::span<float> value;
  std::span<float> grad;
  bool binarized = false;
};

struct InferOptions {
  /// Use XOR/popcount kernels for binarized convolutions; false runs the
  /// unpacked floating reference path.
  bool packed = true;
  Parallelism parallelism{};
  /// Verify every binarized convolution sees {+1,-1} activations.
  bool check_binary = false;
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual std::string describe() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  /// Eval mode; pure, safe to call concurrently.
  virtual Activation infer(const Activation& x, const InferOptions& opt) const = 0;
  /// Training mode: batch statistics, running-stat updates, cached inputs.
  virtual Activation forward_train(const Activation& x) = 0;
  /// Consumes the cache of the preceding forward_train; sets parameter grads.
  virtual Activation backward(const Activation& grad_out) = 0;

  /// Output extents for an input of shape `in`; complex and real alike.
  virtual Shape out_shape(const Shape& in) const { return in; }

  virtual void params(std::vector<ParamRef>&) {}
  /// Sub-layers for composites, empty otherwise.
  virtual std::vector<Layer*> children() { return {}; }
  virtual std::vector<const Layer*> children() const { return {}; }

  virtual void write_topology(ByteWriter& w) const = 0;
  virtual void write_payload(ByteWriter&) const {}
  virtual void read_payload(ByteReader&) {}
};

using LayerPtr = std::unique_ptr<Layer>;

// ---------------------------------------------------------------------------
// Concrete layers

/// Real image -> complex tensor. The real plane is the image; the imaginary
/// plane is conv2(relu(conv1(x)) + x), two 3x3 full-precision convolutions
/// with bias around a residual connection.
class ComplexInputGeneratorLayer final : public Layer {
 public:
  explicit ComplexInputGeneratorLayer(std::size_t channels);

  LayerKind kind() const override { return LayerKind::ComplexInputGenerator; }
  std::string describe() const override;
  LayerPtr clone() const override { return std::make_unique<ComplexInputGeneratorLayer>(*this); }
  Activation infer(const Activation& x, const InferOptions& opt) const override;
  Activation forward_train(const Activation& x) override;
  Activation backward(const Activation& grad_out) override;
  void params(std::vector<ParamRef>& out) override;
  void write_topology(ByteWriter& w) const override;
  void write_payload(ByteWriter& w) const override;
  void read_payload(ByteReader& r) override;

  std::size_t channels() const { return geometry_.in_channels; }
  RealTensor conv1, conv2;  // (c, c, 3, 3)
  std::vector<float> bias1, bias2;

 private:
  ConvGeometry geometry_;
  RealTensor grad_conv1_, grad_conv2_;
  std::vector<float> grad_bias1_, grad_bias2_;
  RealTensor cache_x_, cache_pre_, cache_sum_;
};

class ComplexConvFpLayer final : public Layer {
 public:
  ComplexConvFpLayer(const ConvGeometry& g, bool bias);

  LayerKind kind() const override { return LayerKind::ComplexConvFP; }
  std::string describe() const override;
  LayerPtr clone() const override { return std::make_unique<ComplexConvFpLayer>(*this); }
  Activation infer(const Activation& x, const InferOptions& opt) const override;
  Activation forward_train(const Activation& x) override;
  Activation backward(const Activation& grad_out) override;
  Shape out_shape(const Shape& in) const override;
  void params(std::vector<ParamRef>& out) override;
  void write_topology(ByteWriter& w) const override;
  void write_payload(ByteWriter& w) const override;
  void read_payload(ByteReader& r) override;

  ComplexConvLayer conv;

 private:
  ComplexConvLayer grad_;
  ComplexTensor cache_x_;
};

/// Binarized complex convolution. Latent full-precision weights are kept;
/// forward uses their quadrant binarization through the packed kernel.
class BinaryComplexConvLayer final : public Layer {
 public:
  explicit BinaryComplexConvLayer(const ConvGeometry& g);

  LayerKind kind() const override { return LayerKind::BinaryComplexConv; }
  std::string describe() const override;
  LayerPtr clone() const override { return std::make_unique<BinaryComplexConvLayer>(*this); }
  Activation infer(const Activation& x, const InferOptions& opt) const override;
  Activation forward_train(const Activation& x) override;
  Activation backward(const Activation& grad_out) override;
  Shape out_shape(const Shape& in) const override;
  void params(std::vector<ParamRef>& out) override;
  void write_topology(ByteWriter& w) const override;
  void write_payload(ByteWriter& w) const override;
  void read_payload(ByteReader& r) override;

  const ConvGeometry& geometry() const { return geometry_; }
  BitplaneTensor packed_weights() const;

  /// Zeroes latent weights of channels whose flag is 0 and skips them at inference.
  void set_active_channels(std::vector<std::uint8_t> active);
  const std::vector<std::uint8_t>& active_channels() const { return active_; }
  std::size_t active_count() const;

  ComplexTensor latent;  // (out_c, in_c, kh, kw)

 private:
  ComplexTensor run(const ComplexTensor& x, const InferOptions& opt) const;

  ConvGeometry geometry_;
  std::vector<std::uint8_t> active_;
  ComplexTensor grad_;
  ComplexTensor cache_x_, cache_wb_;
};

class CgbnNode final : public Layer {
 public:
  explicit CgbnNode(std::size_t channels) : bn(CgbnLayer::identity(channels)) {}

  LayerKind kind() const override { return LayerKind::CGBN; }
  std::string describe() const override;
  LayerPtr clone() const override { return std::make_unique<CgbnNode>(*this); }
  Activation infer(const Activation& x, const InferOptions& opt) const override;
  Activation forward_train(const Activation& x) override;
  Activation backward(const Activation& grad_out) override;
  void params(std::vector<ParamRef>& out) override;
  void write_topology(ByteWriter& w) const override;
  void write_payload(ByteWriter& w) const override;
  void read_payload(ByteReader& r) override;

  CgbnLayer bn;

 private:
  CgbnCache cache_;
  CgbnGrads grads_;
};

/// Real batch norm. A complex input is normalized as its 2c-channel
/// concatenation (real channels first).
class RealBnNode final : public Layer {
 public:
  explicit RealBnNode(std::size_t channels) : bn(RealBnLayer::identity(channels)) {}

  LayerKind kind() const override { return LayerKind::RealBN; }
  std::string describe() const override;
  LayerPtr clone() const override { return std::make_unique<RealBnNode>(*this); }
  Activation infer(const Activation& x, const InferOptions& opt) const override;
  Activation forward_train(const Activation& x) override;
  Activation backward(const Activation& grad_out) override;
  void params(std::vector<ParamRef>& out) override;
  void write_topology(ByteWriter& w) const override;
  void write_payload(ByteWriter& w) const override;
  void read_payload(ByteReader& r) override;

  RealBnLayer bn;

 private:
  RealBnCache cache_;
  RealBnGrads grads_;
  bool complex_input_ = false;
};

class PoolNode final : public Layer {
 public:
  /// kind is AvgPool or MaxPool.
  PoolNode(LayerKind kind, PoolGeometry geometry);

  LayerKind kind() const override { return kind_; }
  std::string describe() const override;
  LayerPtr clone() const override { return std::make_unique<PoolNode>(*this); }
  Activation infer(const Activation& x, const InferOptions& opt) const override;
  Activation forward_train(const Activation& x) override;
  Activation backward(const Activation& grad_out) override;
  Shape out_shape(const Shape& in) const override;
  void write_topology(ByteWriter& w) const override;

  const PoolGeometry& geometry() const { return geometry_; }

 private:
  LayerKind kind_;
  PoolGeometry geometry_;
  Activation cache_x_;
};

class SpectralPoolNode final : public Layer {
 public:
  SpectralPoolNode(std::size_t out_h, std::size_t out_w) : out_h_(out_h), out_w_(out_w) {}

  LayerKind kind() const override { return LayerKind::SpectralPool; }
  std::string describe() const override;
  LayerPtr clone() const override { return std::make_unique<SpectralPoolNode>(*this); }
  Activation infer(const Activation& x, const InferOptions& opt) const override;
  Activation forward_train(const Activation& x) override;
  Activation backward(const Activation& grad_out) override;
  Shape out_shape(const Shape& in) const override;
  void write_topology(ByteWriter& w) const override;

 private:
  std::size_t out_h_, out_w_;
  Shape in_shape_{};
};

/// ReLU, Hardtanh and Binarize share the elementwise plumbing. Binarize uses
/// the hardtanh gate (|x| < 1) as its straight-through backward.
class ElementwiseNode final : public Layer {
 public:
  explicit ElementwiseNode(LayerKind kind);

  LayerKind kind() const override { return kind_; }
  std::string describe() const override { return to_string(kind_); }
  LayerPtr clone() const override { return std::make_unique<ElementwiseNode>(*this); }
  Activation infer(const Activation& x, const InferOptions& opt) const override;
  Activation forward_train(const Activation& x) override;
  Activation backward(const Activation& grad_out) override;
  void write_topology(ByteWriter& w) const override;

 private:
  LayerKind kind_;
  Activation cache_x_;
};

/// Complex (n,c,h,w) -> real (n, 2*c*h*w, 1, 1) using the concatenated
/// channel convention; real inputs are reshaped to (n, c*h*w, 1, 1).
class FlattenNode final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::Flatten; }
  std::string describe() const override { return "Flatten"; }
  LayerPtr clone() const override { return std::make_unique<FlattenNode>(*this); }
  Activation infer(const Activation& x, const InferOptions& opt) const override;
  Activation forward_train(const Activation& x) override;
  Activation backward(const Activation& grad_out) override;
  Shape out_shape(const Shape& in) const override;
  void write_topology(ByteWriter& w) const override;

 private:
  Shape in_shape_{};
  bool complex_input_ = false;
};

class FcNode final : public Layer {
 public:
  FcNode(std::size_t in_features, std::size_t out_features);

  LayerKind kind() const override { return LayerKind::FC; }
  std::string describe() const override;
  LayerPtr clone() const override { return std::make_unique<FcNode>(*this); }
  Activation infer(const Activation& x, const InferOptions& opt) const override;
  Activation forward_train(const Activation& x) override;
  Activation backward(const Activation& grad_out) override;
  Shape out_shape(const Shape& in) const override;
  void params(std::vector<ParamRef>& out) override;
  void write_topology(ByteWriter& w) const override;
  void write_payload(ByteWriter& w) const override;
  void read_payload(ByteReader& r) override;

  FcLayer fc;

 private:
  FcLayer grad_;
  RealTensor cache_x_;
};

/// Residual block: out = main(x) + shortcut(x). ResidualBlock1 has an
/// identity shortcut; ResidualBlock2 has a one-convolution shortcut path.
class ResidualBlockNode final : public Layer {
 public:
  ResidualBlockNode(LayerKind kind, std::vector<LayerPtr> main, std::vector<LayerPtr> shortcut);
  ResidualBlockNode(const ResidualBlockNode& other);

  LayerKind kind() const override { return kind_; }
  std::string describe() const override;
  LayerPtr clone() const override { return std::make_unique<ResidualBlockNode>(*this); }
  Activation infer(const Activation& x, const InferOptions& opt) const override;
  Activation forward_train(const Activation& x) override;
  Activation backward(const Activation& grad_out) override;
  Shape out_shape(const Shape& in) const override;
  void params(std::vector<ParamRef>& out) override;
  std::vector<Layer*> children() override;
  std::vector<const Layer*> children() const override;
  void write_topology(ByteWriter& w) const override;
  void write_payload(ByteWriter& w) const override;
  void read_payload(ByteReader& r) override;

  std::vector<LayerPtr>& main_path() { return main_; }
  std::vector<LayerPtr>& shortcut_path() { return shortcut_; }
  const std::vector<LayerPtr>& main_path() const { return main_; }
  const std::vector<LayerPtr>& shortcut_path() const { return shortcut_; }

 private:
  LayerKind kind_;
  std::vector<LayerPtr> main_;
  std::vector<LayerPtr> shortcut_;
};

/// Decodes one layer (recursively for residual blocks) from a topology stream.
LayerPtr read_layer_topology(ByteReader& r);

// ---------------------------------------------------------------------------

class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(std::string name, Shape input, std::vector<LayerPtr> layers);
  ModelGraph(const ModelGraph& other);
  ModelGraph& operator=(const ModelGraph& other);
  ModelGraph(ModelGraph&&) = default;
  ModelGraph& operator=(ModelGraph&&) = default;

  const std::string& name() const { return name_; }
  /// Per-image input shape; n is ignored.
  const Shape& input_shape() const { return input_; }
  std::vector<LayerPtr>& layers() { return layers_; }
  const std::vector<LayerPtr>& layers() const { return layers_; }

  Activation infer(const Activation& x, const InferOptions& opt = {}) const;
  Activation forward_train(const Activation& x);
  Activation backward(const Activation& grad_out);
  std::vector<ParamRef> params();

  /// Every layer in dataflow order, descending into residual blocks.
  std::vector<Layer*> flat_layers();
  std::vector<const Layer*> flat_layers() const;
  std::vector<BinaryComplexConvLayer*> binary_convs();
  /// Shape of the output for a batch of n images.
  Shape output_shape(std::size_t n = 1) const;

  /// Checks the structural rules: first and last compute layers are full
  /// precision, and every binarized conv is fed by a Binarize.
  void validate() const;

 private:
  std::string name_;
  Shape input_{};
  std::vector<LayerPtr> layers_;
};

/// Runs the model in eval mode and returns (n, classes, 1, 1) logits.
RealTensor forward(const ModelGraph& model, const RealTensor& batch, const InferOptions& opt = {});

// ---------------------------------------------------------------------------
// Builders. Weights are initialized from `seed`.

/// Standalone generator fragment: real (c,h,w) image -> complex (c,h,w).
ModelGraph build_complex_input_generator(std::size_t channels, std::size_t h = 32, std::size_t w = 32,
                                         std::uint64_t seed = 1);

enum class PoolKind { Average, Max, Spectral };

ModelGraph build_nin_bcnn(std::size_t num_classes = 10, std::uint64_t seed = 1, PoolKind pool = PoolKind::Average);
ModelGraph build_resnet18_bcnn(std::size_t num_classes = 10, std::uint64_t seed = 1);

/// Small BCNN for desk-scale experiments: generator, one full-precision
/// conv block, `binary_layers` binarized blocks of `width` channels, one
/// pooling stage, FC head.
struct TinyBcnnSpec {
  std::size_t in_channels = 3, height = 8, width_px = 8;
  std::size_t width = 8;
  std::size_t binary_layers = 1;
  std::size_t num_classes = 2;
  PoolKind pool = PoolKind::Average;
};

ModelGraph build_tiny_bcnn(const TinyBcnnSpec& spec, std::uint64_t seed = 1);

/// Builds the binarized residual blocks as used by build_resnet18_bcnn.
LayerPtr make_residual_block1(std::size_t channels, std::uint64_t seed);
LayerPtr make_residual_block2(std::size_t in_channels, std::size_t out_channels, std::size_t stride,
                              std::uint64_t seed);

}  // namespace bcnn
