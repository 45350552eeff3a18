#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "bcnn/binary_ops.hpp"
#include "bcnn/tensor.hpp"

namespace bcnn {

// ---------------------------------------------------------------------------
// Real convolution primitives. Positions outside the input read `pad_value`.

RealTensor conv2d_real(const RealTensor& x, const RealTensor& w, const ConvGeometry& g, float pad_value = 0.0f);
RealTensor conv2d_real_backward_input(const RealTensor& grad_out, const RealTensor& w, const ConvGeometry& g,
                                      const Shape& in_shape);
RealTensor conv2d_real_backward_weight(const RealTensor& x, const RealTensor& grad_out, const ConvGeometry& g,
                                       float pad_value = 0.0f);

// ---------------------------------------------------------------------------
// Complex convolution

struct ComplexConvLayer {
  ComplexTensor weights;  // (out_c, in_c, kh, kw)
  ConvGeometry geometry;
  bool has_bias = false;
  std::vector<float> bias_re, bias_im;
};

/// y_r = conv(x_r,w_r) - conv(x_i,w_i) + b_r,  y_i = conv(x_r,w_i) + conv(x_i,w_r) + b_i.
ComplexTensor complex_conv2d_fp(const ComplexTensor& x, const ComplexConvLayer& layer);

/// Bias-free complex convolution with an explicit pad value on both planes.
ComplexTensor complex_conv2d(const ComplexTensor& x, const ComplexTensor& w, const ConvGeometry& g,
                             float pad_value);

struct ComplexConvGrads {
  ComplexTensor input;
  ComplexTensor weights;
};

ComplexConvGrads complex_conv2d_backward(const ComplexTensor& x, const ComplexTensor& w, const ConvGeometry& g,
                                         const ComplexTensor& grad_out, float pad_value);

// ---------------------------------------------------------------------------
// Complex Gaussian batch normalization
//
//   xr' = (x_r - mu_r) / sqrt(2 var_r + eps),  xi' = (x_i - mu_i) / sqrt(2 var_i + eps)
//   y   = gamma * (xr' + i xi') + beta          (complex gamma, beta)

struct CgbnLayer {
  std::vector<float> gamma_re, gamma_im, beta_re, beta_im;
  std::vector<float> running_mean_re, running_mean_im, running_var_re, running_var_im;
  float eps = 1e-5f;
  float momentum = 0.1f;

  /// gamma = 1, beta = 0, running mean 0, running variance 1.
  static CgbnLayer identity(std::size_t channels);
  std::size_t channels() const { return gamma_re.size(); }
};

/// Saved forward state for the backward pass.
struct CgbnCache {
  ComplexTensor normalized;  // xr', xi' before the affine step
  std::vector<double> inv_std_re, inv_std_im;
  bool training = false;
};

struct CgbnGrads {
  std::vector<float> gamma_re, gamma_im, beta_re, beta_im;
};

ComplexTensor cgbn_forward(const ComplexTensor& x, CgbnLayer& layer, bool training, CgbnCache* cache = nullptr);
/// Eval-mode forward; never touches running statistics.
ComplexTensor cgbn_infer(const ComplexTensor& x, const CgbnLayer& layer);
ComplexTensor cgbn_backward(const ComplexTensor& grad_out, const CgbnLayer& layer, const CgbnCache& cache,
                            CgbnGrads& grads);

// ---------------------------------------------------------------------------
// Covariance (whitening) complex batch normalization, reference only.

using Mat2 = std::array<double, 4>;  // row-major 2x2

struct CovComplexBnLayer {
  std::vector<Mat2> gamma;
  std::vector<float> beta_re, beta_im;
  std::vector<double> running_mean_re, running_mean_im;
  std::vector<Mat2> running_cov;
  float eps = 1e-5f;
  float momentum = 0.1f;

  static CovComplexBnLayer identity(std::size_t channels);
};

/// Symmetric inverse square root of a symmetric positive definite 2x2 matrix.
Mat2 inverse_sqrt_spd(const Mat2& m);

ComplexTensor cov_complex_bn_forward(const ComplexTensor& x, CovComplexBnLayer& layer, bool training);

// ---------------------------------------------------------------------------
// Real batch normalization, per channel of an NCHW tensor.

struct RealBnLayer {
  std::vector<float> gamma, beta, running_mean, running_var;
  float eps = 1e-5f;
  float momentum = 0.1f;

  static RealBnLayer identity(std::size_t channels);
  std::size_t channels() const { return gamma.size(); }
};

struct RealBnCache {
  RealTensor normalized;
  std::vector<double> inv_std;
  bool training = false;
};

struct RealBnGrads {
  std::vector<float> gamma, beta;
};

RealTensor real_bn_forward(const RealTensor& x, RealBnLayer& layer, bool training, RealBnCache* cache = nullptr);
RealTensor real_bn_infer(const RealTensor& x, const RealBnLayer& layer);
RealTensor real_bn_backward(const RealTensor& grad_out, const RealBnLayer& layer, const RealBnCache& cache,
                            RealBnGrads& grads);

// ---------------------------------------------------------------------------
// Pooling

struct PoolGeometry {
  std::size_t window = 2;
  std::size_t stride = 2;

  /// Throws ShapeMismatch unless (extent - window) is a non-negative multiple of stride.
  std::size_t out_extent(std::size_t extent) const;
  bool operator==(const PoolGeometry&) const = default;
};

RealTensor avg_pool(const RealTensor& x, const PoolGeometry& p);
ComplexTensor avg_pool(const ComplexTensor& x, const PoolGeometry& p);
RealTensor avg_pool_backward(const RealTensor& grad_out, const PoolGeometry& p, const Shape& in_shape);

RealTensor max_pool(const RealTensor& x, const PoolGeometry& p);
ComplexTensor max_pool(const ComplexTensor& x, const PoolGeometry& p);
/// Routes each output gradient to the first maximal input of its window.
RealTensor max_pool_backward(const RealTensor& x, const RealTensor& grad_out, const PoolGeometry& p);

/// Low-pass spectral pooling. The 2D DFT of each (re, im) plane pair is
/// cropped to the centered out_h x out_w block (even lengths keep the extra
/// bin on the negative side), inverse transformed and rescaled by
/// (out_h*out_w)/(h*w) so constants are preserved.
template <class T>
BasicComplexTensor<T> spectral_pool(const BasicComplexTensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Adjoint of spectral_pool, i.e. the gradient of a real loss.
template <class T>
BasicComplexTensor<T> spectral_pool_backward(const BasicComplexTensor<T>& grad_out, std::size_t in_h,
                                             std::size_t in_w);

// ---------------------------------------------------------------------------
// Activations, applied per plane for complex inputs.

RealTensor relu(const RealTensor& x);
ComplexTensor relu(const ComplexTensor& x);
RealTensor hardtanh(const RealTensor& x);
ComplexTensor hardtanh(const ComplexTensor& x);

/// Gradient gate: grad where lo < x < hi, else 0.
RealTensor gate_backward(const RealTensor& x, const RealTensor& grad_out, float lo, float hi);

// ---------------------------------------------------------------------------
// Fully connected: x is (n, F, 1, 1) or any shape flattened per image,
// weights are out x F row-major.

struct FcLayer {
  std::size_t in_features = 0, out_features = 0;
  std::vector<float> weights;  // out_features * in_features
  std::vector<float> bias;     // out_features
};

RealTensor fully_connected(const RealTensor& x, const FcLayer& layer);

struct FcGrads {
  RealTensor input;
  std::vector<float> weights, bias;
};

FcGrads fully_connected_backward(const RealTensor& x, const FcLayer& layer, const RealTensor& grad_out);

}  // namespace bcnn
