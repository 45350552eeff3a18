#include "bcnn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

namespace bcnn {

namespace {

void check_conv(const Shape& xs, const Shape& ws, const ConvGeometry& g) {
  g.validate();
  if (xs.c != g.in_channels)
    throw Error(ErrorCode::ShapeMismatch,
                "input has " + std::to_string(xs.c) + " channels, expected " + std::to_string(g.in_channels));
  const Shape expect{g.out_channels, g.in_channels, g.kh, g.kw};
  if (!(ws == expect))
    throw Error(ErrorCode::ShapeMismatch, "weights " + to_string(ws) + ", expected " + to_string(expect));
}

inline std::ptrdiff_t src_index(std::size_t o, std::size_t stride, std::size_t k, std::size_t pad) {
  return static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(pad);
}

void check_same(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": " + to_string(a) + " vs " + to_string(b));
}

}  // namespace

RealTensor conv2d_real(const RealTensor& x, const RealTensor& w, const ConvGeometry& g, float pad_value) {
  check_conv(x.shape(), w.shape(), g);
  const Shape xs = x.shape();
  const std::size_t oh = g.out_h(xs.h), ow = g.out_w(xs.w);
  RealTensor out({xs.n, g.out_channels, oh, ow});
  const std::int64_t jobs = static_cast<std::int64_t>(xs.n * g.out_channels);

#pragma omp parallel for schedule(static)
  for (std::int64_t job = 0; job < jobs; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / g.out_channels;
    const std::size_t o = static_cast<std::size_t>(job) % g.out_channels;
    std::vector<double> acc(oh * ow, 0.0);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const float* xp = x.channel(n, c).data();
      for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const double wv = w.at(o, c, ky, kx);
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy = src_index(oy, g.sh, ky, g.ph);
            double* row = acc.data() + oy * ow;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(xs.h)) {
              if (pad_value != 0.0f)
                for (std::size_t ox = 0; ox < ow; ++ox) row[ox] += wv * pad_value;
              continue;
            }
            const float* xrow = xp + iy * xs.w;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::ptrdiff_t ix = src_index(ox, g.sw, kx, g.pw);
              const double v = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(xs.w)) ? pad_value : xrow[ix];
              row[ox] += wv * v;
            }
          }
        }
    }
    auto dst = out.channel(n, o);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(acc[i]);
  }
  return out;
}

RealTensor conv2d_real_backward_input(const RealTensor& grad_out, const RealTensor& w, const ConvGeometry& g,
                                      const Shape& in_shape) {
  check_conv(in_shape, w.shape(), g);
  const std::size_t oh = g.out_h(in_shape.h), ow = g.out_w(in_shape.w);
  check_same(grad_out.shape(), Shape{in_shape.n, g.out_channels, oh, ow}, "conv grad_out");
  RealTensor gx(in_shape);
  const std::int64_t jobs = static_cast<std::int64_t>(in_shape.n * in_shape.c);

#pragma omp parallel for schedule(static)
  for (std::int64_t job = 0; job < jobs; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / in_shape.c;
    const std::size_t c = static_cast<std::size_t>(job) % in_shape.c;
    std::vector<double> acc(in_shape.plane(), 0.0);
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      const float* gy = grad_out.channel(n, o).data();
      for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const double wv = w.at(o, c, ky, kx);
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy = src_index(oy, g.sh, ky, g.ph);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in_shape.h)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::ptrdiff_t ix = src_index(ox, g.sw, kx, g.pw);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in_shape.w)) continue;
              acc[iy * in_shape.w + ix] += wv * gy[oy * ow + ox];
            }
          }
        }
    }
    auto dst = gx.channel(n, c);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(acc[i]);
  }
  return gx;
}

RealTensor conv2d_real_backward_weight(const RealTensor& x, const RealTensor& grad_out, const ConvGeometry& g,
                                       float pad_value) {
  const Shape xs = x.shape();
  g.validate();
  if (xs.c != g.in_channels) throw Error(ErrorCode::ShapeMismatch, "input channels for weight gradient");
  const std::size_t oh = g.out_h(xs.h), ow = g.out_w(xs.w);
  check_same(grad_out.shape(), Shape{xs.n, g.out_channels, oh, ow}, "conv grad_out");
  RealTensor gw({g.out_channels, g.in_channels, g.kh, g.kw});
  const std::int64_t jobs = static_cast<std::int64_t>(g.out_channels * g.in_channels);

#pragma omp parallel for schedule(static)
  for (std::int64_t job = 0; job < jobs; ++job) {
    const std::size_t o = static_cast<std::size_t>(job) / g.in_channels;
    const std::size_t c = static_cast<std::size_t>(job) % g.in_channels;
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double acc = 0.0;
        for (std::size_t n = 0; n < xs.n; ++n) {
          const float* gy = grad_out.channel(n, o).data();
          const float* xp = x.channel(n, c).data();
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const std::ptrdiff_t iy = src_index(oy, g.sh, ky, g.ph);
            const bool row_in = iy >= 0 && iy < static_cast<std::ptrdiff_t>(xs.h);
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const std::ptrdiff_t ix = src_index(ox, g.sw, kx, g.pw);
              const bool in = row_in && ix >= 0 && ix < static_cast<std::ptrdiff_t>(xs.w);
              const double v = in ? xp[iy * xs.w + ix] : pad_value;
              acc += v * gy[oy * ow + ox];
            }
          }
        }
        gw.at(o, c, ky, kx) = static_cast<float>(acc);
      }
  }
  return gw;
}

namespace {

RealTensor add(const RealTensor& a, const RealTensor& b) {
  RealTensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

RealTensor sub(const RealTensor& a, const RealTensor& b) {
  RealTensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

}  // namespace

ComplexTensor complex_conv2d(const ComplexTensor& x, const ComplexTensor& w, const ConvGeometry& g,
                             float pad_value) {
  ComplexTensor y;
  y.re = sub(conv2d_real(x.re, w.re, g, pad_value), conv2d_real(x.im, w.im, g, pad_value));
  y.im = add(conv2d_real(x.re, w.im, g, pad_value), conv2d_real(x.im, w.re, g, pad_value));
  return y;
}

ComplexTensor complex_conv2d_fp(const ComplexTensor& x, const ComplexConvLayer& layer) {
  ComplexTensor y = complex_conv2d(x, layer.weights, layer.geometry, 0.0f);
  if (layer.has_bias) {
    const Shape s = y.shape();
    if (layer.bias_re.size() != s.c || layer.bias_im.size() != s.c)
      throw Error(ErrorCode::ShapeMismatch, "bias length does not match out_channels");
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        for (float& v : y.re.channel(n, c)) v += layer.bias_re[c];
        for (float& v : y.im.channel(n, c)) v += layer.bias_im[c];
      }
  }
  return y;
}

ComplexConvGrads complex_conv2d_backward(const ComplexTensor& x, const ComplexTensor& w, const ConvGeometry& g,
                                         const ComplexTensor& grad_out, float pad_value) {
  const Shape xs = x.shape();
  ComplexConvGrads r;
  r.input.re = add(conv2d_real_backward_input(grad_out.re, w.re, g, xs),
                   conv2d_real_backward_input(grad_out.im, w.im, g, xs));
  r.input.im = sub(conv2d_real_backward_input(grad_out.im, w.re, g, xs),
                   conv2d_real_backward_input(grad_out.re, w.im, g, xs));
  r.weights.re = add(conv2d_real_backward_weight(x.re, grad_out.re, g, pad_value),
                     conv2d_real_backward_weight(x.im, grad_out.im, g, pad_value));
  r.weights.im = sub(conv2d_real_backward_weight(x.re, grad_out.im, g, pad_value),
                     conv2d_real_backward_weight(x.im, grad_out.re, g, pad_value));
  return r;
}

// ---------------------------------------------------------------------------

namespace {

struct Moments {
  double mean = 0.0, var = 0.0;
};

Moments channel_moments(const RealTensor& x, std::size_t c) {
  const Shape s = x.shape();
  const double count = static_cast<double>(s.n * s.plane());
  double sum = 0.0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (float v : x.channel(n, c)) sum += v;
  const double mean = sum / count;
  double sq = 0.0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (float v : x.channel(n, c)) sq += (v - mean) * (v - mean);
  return {mean, sq / count};
}

// dx = inv * (dxhat - mean(dxhat) - k * xhat * mean(dxhat * xhat)), k = var-factor of the denominator.
void normalize_backward(const RealTensor& dxhat, const RealTensor& xhat, std::size_t c, double inv, double k,
                        RealTensor& dx) {
  const Shape s = dxhat.shape();
  const double count = static_cast<double>(s.n * s.plane());
  double sum_d = 0.0, sum_dx = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    auto d = dxhat.channel(n, c);
    auto h = xhat.channel(n, c);
    for (std::size_t i = 0; i < d.size(); ++i) {
      sum_d += d[i];
      sum_dx += static_cast<double>(d[i]) * h[i];
    }
  }
  const double mean_d = sum_d / count, mean_dx = sum_dx / count;
  for (std::size_t n = 0; n < s.n; ++n) {
    auto d = dxhat.channel(n, c);
    auto h = xhat.channel(n, c);
    auto out = dx.channel(n, c);
    for (std::size_t i = 0; i < d.size(); ++i)
      out[i] = static_cast<float>(inv * (d[i] - mean_d - k * h[i] * mean_dx));
  }
}

void check_channels(const Shape& s, std::size_t expected, const char* layer) {
  if (s.c != expected)
    throw Error(ErrorCode::ShapeMismatch, std::string(layer) + " expects " + std::to_string(expected) +
                                              " channels, got " + std::to_string(s.c));
}

}  // namespace

CgbnLayer CgbnLayer::identity(std::size_t channels) {
  CgbnLayer l;
  l.gamma_re.assign(channels, 1.0f);
  l.gamma_im.assign(channels, 0.0f);
  l.beta_re.assign(channels, 0.0f);
  l.beta_im.assign(channels, 0.0f);
  l.running_mean_re.assign(channels, 0.0f);
  l.running_mean_im.assign(channels, 0.0f);
  l.running_var_re.assign(channels, 1.0f);
  l.running_var_im.assign(channels, 1.0f);
  return l;
}

namespace {

ComplexTensor cgbn_apply(const ComplexTensor& x, const CgbnLayer& layer, const std::vector<double>& mean_re,
                         const std::vector<double>& mean_im, const std::vector<double>& inv_re,
                         const std::vector<double>& inv_im, CgbnCache* cache) {
  const Shape s = x.shape();
  ComplexTensor out(s);
  ComplexTensor xhat(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      auto xr = x.re.channel(n, c), xi = x.im.channel(n, c);
      auto hr = xhat.re.channel(n, c), hi = xhat.im.channel(n, c);
      auto yr = out.re.channel(n, c), yi = out.im.channel(n, c);
      const double gr = layer.gamma_re[c], gi = layer.gamma_im[c];
      for (std::size_t i = 0; i < xr.size(); ++i) {
        const double a = (xr[i] - mean_re[c]) * inv_re[c];
        const double b = (xi[i] - mean_im[c]) * inv_im[c];
        hr[i] = static_cast<float>(a);
        hi[i] = static_cast<float>(b);
        yr[i] = static_cast<float>(gr * a - gi * b + layer.beta_re[c]);
        yi[i] = static_cast<float>(gr * b + gi * a + layer.beta_im[c]);
      }
    }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std_re = inv_re;
    cache->inv_std_im = inv_im;
  }
  return out;
}

}  // namespace

ComplexTensor cgbn_forward(const ComplexTensor& x, CgbnLayer& layer, bool training, CgbnCache* cache) {
  const Shape s = x.shape();
  check_channels(s, layer.channels(), "CGBN");
  std::vector<double> mean_re(s.c), mean_im(s.c), inv_re(s.c), inv_im(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    if (training) {
      const Moments mr = channel_moments(x.re, c), mi = channel_moments(x.im, c);
      mean_re[c] = mr.mean;
      mean_im[c] = mi.mean;
      inv_re[c] = 1.0 / std::sqrt(2.0 * mr.var + layer.eps);
      inv_im[c] = 1.0 / std::sqrt(2.0 * mi.var + layer.eps);
      const float m = layer.momentum;
      layer.running_mean_re[c] = (1 - m) * layer.running_mean_re[c] + m * static_cast<float>(mr.mean);
      layer.running_mean_im[c] = (1 - m) * layer.running_mean_im[c] + m * static_cast<float>(mi.mean);
      layer.running_var_re[c] = (1 - m) * layer.running_var_re[c] + m * static_cast<float>(mr.var);
      layer.running_var_im[c] = (1 - m) * layer.running_var_im[c] + m * static_cast<float>(mi.var);
    } else {
      mean_re[c] = layer.running_mean_re[c];
      mean_im[c] = layer.running_mean_im[c];
      inv_re[c] = 1.0 / std::sqrt(2.0 * layer.running_var_re[c] + layer.eps);
      inv_im[c] = 1.0 / std::sqrt(2.0 * layer.running_var_im[c] + layer.eps);
    }
  }
  if (cache) cache->training = training;
  return cgbn_apply(x, layer, mean_re, mean_im, inv_re, inv_im, cache);
}

ComplexTensor cgbn_infer(const ComplexTensor& x, const CgbnLayer& layer) {
  CgbnLayer copy = layer;
  return cgbn_forward(x, copy, false);
}

ComplexTensor cgbn_backward(const ComplexTensor& grad_out, const CgbnLayer& layer, const CgbnCache& cache,
                            CgbnGrads& grads) {
  const Shape s = grad_out.shape();
  check_same(s, cache.normalized.shape(), "CGBN backward");
  grads.gamma_re.assign(s.c, 0.0f);
  grads.gamma_im.assign(s.c, 0.0f);
  grads.beta_re.assign(s.c, 0.0f);
  grads.beta_im.assign(s.c, 0.0f);
  ComplexTensor dxhat(s);
  ComplexTensor dx(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    const double gr = layer.gamma_re[c], gi = layer.gamma_im[c];
    double d_gr = 0, d_gi = 0, d_br = 0, d_bi = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      auto yr = grad_out.re.channel(n, c), yi = grad_out.im.channel(n, c);
      auto hr = cache.normalized.re.channel(n, c), hi = cache.normalized.im.channel(n, c);
      auto dr = dxhat.re.channel(n, c), di = dxhat.im.channel(n, c);
      for (std::size_t i = 0; i < yr.size(); ++i) {
        d_gr += yr[i] * hr[i] + yi[i] * hi[i];
        d_gi += -yr[i] * hi[i] + yi[i] * hr[i];
        d_br += yr[i];
        d_bi += yi[i];
        dr[i] = static_cast<float>(yr[i] * gr + yi[i] * gi);
        di[i] = static_cast<float>(-yr[i] * gi + yi[i] * gr);
      }
    }
    grads.gamma_re[c] = static_cast<float>(d_gr);
    grads.gamma_im[c] = static_cast<float>(d_gi);
    grads.beta_re[c] = static_cast<float>(d_br);
    grads.beta_im[c] = static_cast<float>(d_bi);
    if (cache.training) {
      normalize_backward(dxhat.re, cache.normalized.re, c, cache.inv_std_re[c], 2.0, dx.re);
      normalize_backward(dxhat.im, cache.normalized.im, c, cache.inv_std_im[c], 2.0, dx.im);
    } else {
      for (std::size_t n = 0; n < s.n; ++n) {
        auto dr = dxhat.re.channel(n, c), di = dxhat.im.channel(n, c);
        auto xr = dx.re.channel(n, c), xi = dx.im.channel(n, c);
        for (std::size_t i = 0; i < dr.size(); ++i) {
          xr[i] = static_cast<float>(dr[i] * cache.inv_std_re[c]);
          xi[i] = static_cast<float>(di[i] * cache.inv_std_im[c]);
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

CovComplexBnLayer CovComplexBnLayer::identity(std::size_t channels) {
  CovComplexBnLayer l;
  l.gamma.assign(channels, Mat2{1, 0, 0, 1});
  l.beta_re.assign(channels, 0.0f);
  l.beta_im.assign(channels, 0.0f);
  l.running_mean_re.assign(channels, 0.0);
  l.running_mean_im.assign(channels, 0.0);
  l.running_cov.assign(channels, Mat2{1, 0, 0, 1});
  return l;
}

namespace {

double min_eigenvalue(const Mat2& m) {
  const double a = m[0], b = m[1], c = m[3];
  const double half_diff = 0.5 * (a - c);
  return 0.5 * (a + c) - std::sqrt(half_diff * half_diff + b * b);
}

}  // namespace

Mat2 inverse_sqrt_spd(const Mat2& m) {
  const double a = m[0], b = m[1], c = m[3];
  const double s = std::sqrt(a * c - b * b);
  const double t = std::sqrt(a + c + 2.0 * s);
  const double k = 1.0 / (s * t);
  return {k * (c + s), -k * b, -k * b, k * (a + s)};
}

ComplexTensor cov_complex_bn_forward(const ComplexTensor& x, CovComplexBnLayer& layer, bool training) {
  const Shape s = x.shape();
  check_channels(s, layer.gamma.size(), "covariance complex BN");
  const double count = static_cast<double>(s.n * s.plane());
  ComplexTensor out(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    double mr, mi;
    Mat2 v;
    if (training) {
      double sr = 0, si = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        for (float q : x.re.channel(n, c)) sr += q;
        for (float q : x.im.channel(n, c)) si += q;
      }
      mr = sr / count;
      mi = si / count;
      double vrr = 0, vii = 0, vri = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        auto xr = x.re.channel(n, c), xi = x.im.channel(n, c);
        for (std::size_t i = 0; i < xr.size(); ++i) {
          const double dr = xr[i] - mr, di = xi[i] - mi;
          vrr += dr * dr;
          vii += di * di;
          vri += dr * di;
        }
      }
      v = {vrr / count, vri / count, vri / count, vii / count};
      const double m = layer.momentum;
      layer.running_mean_re[c] = (1 - m) * layer.running_mean_re[c] + m * mr;
      layer.running_mean_im[c] = (1 - m) * layer.running_mean_im[c] + m * mi;
      for (int k = 0; k < 4; ++k) layer.running_cov[c][k] = (1 - m) * layer.running_cov[c][k] + m * v[k];
    } else {
      mr = layer.running_mean_re[c];
      mi = layer.running_mean_im[c];
      v = layer.running_cov[c];
    }
    if (min_eigenvalue(v) < -1e-6)
      throw Error(ErrorCode::NonPsdCovariance, "channel " + std::to_string(c) + " covariance has eigenvalue " +
                                                   std::to_string(min_eigenvalue(v)));
    const Mat2 w = inverse_sqrt_spd({v[0] + layer.eps, v[1], v[2], v[3] + layer.eps});
    const Mat2& g = layer.gamma[c];
    // Combined linear map gamma * W.
    const Mat2 a{g[0] * w[0] + g[1] * w[2], g[0] * w[1] + g[1] * w[3], g[2] * w[0] + g[3] * w[2],
                 g[2] * w[1] + g[3] * w[3]};
    for (std::size_t n = 0; n < s.n; ++n) {
      auto xr = x.re.channel(n, c), xi = x.im.channel(n, c);
      auto yr = out.re.channel(n, c), yi = out.im.channel(n, c);
      for (std::size_t i = 0; i < xr.size(); ++i) {
        const double dr = xr[i] - mr, di = xi[i] - mi;
        yr[i] = static_cast<float>(a[0] * dr + a[1] * di + layer.beta_re[c]);
        yi[i] = static_cast<float>(a[2] * dr + a[3] * di + layer.beta_im[c]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

RealBnLayer RealBnLayer::identity(std::size_t channels) {
  RealBnLayer l;
  l.gamma.assign(channels, 1.0f);
  l.beta.assign(channels, 0.0f);
  l.running_mean.assign(channels, 0.0f);
  l.running_var.assign(channels, 1.0f);
  return l;
}

RealTensor real_bn_forward(const RealTensor& x, RealBnLayer& layer, bool training, RealBnCache* cache) {
  const Shape s = x.shape();
  check_channels(s, layer.channels(), "real BN");
  RealTensor out(s);
  RealTensor xhat(s);
  std::vector<double> inv(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    double mean, var;
    if (training) {
      const Moments m = channel_moments(x, c);
      mean = m.mean;
      var = m.var;
      const float k = layer.momentum;
      layer.running_mean[c] = (1 - k) * layer.running_mean[c] + k * static_cast<float>(mean);
      layer.running_var[c] = (1 - k) * layer.running_var[c] + k * static_cast<float>(var);
    } else {
      mean = layer.running_mean[c];
      var = layer.running_var[c];
    }
    inv[c] = 1.0 / std::sqrt(var + layer.eps);
    for (std::size_t n = 0; n < s.n; ++n) {
      auto xp = x.channel(n, c);
      auto hp = xhat.channel(n, c);
      auto yp = out.channel(n, c);
      for (std::size_t i = 0; i < xp.size(); ++i) {
        const double h = (xp[i] - mean) * inv[c];
        hp[i] = static_cast<float>(h);
        yp[i] = static_cast<float>(layer.gamma[c] * h + layer.beta[c]);
      }
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv);
    cache->training = training;
  }
  return out;
}

RealTensor real_bn_infer(const RealTensor& x, const RealBnLayer& layer) {
  RealBnLayer copy = layer;
  return real_bn_forward(x, copy, false);
}

RealTensor real_bn_backward(const RealTensor& grad_out, const RealBnLayer& layer, const RealBnCache& cache,
                            RealBnGrads& grads) {
  const Shape s = grad_out.shape();
  check_same(s, cache.normalized.shape(), "real BN backward");
  grads.gamma.assign(s.c, 0.0f);
  grads.beta.assign(s.c, 0.0f);
  RealTensor dxhat(s), dx(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    double dg = 0, db = 0;
    for (std::size_t n = 0; n < s.n; ++n) {
      auto g = grad_out.channel(n, c);
      auto h = cache.normalized.channel(n, c);
      auto d = dxhat.channel(n, c);
      for (std::size_t i = 0; i < g.size(); ++i) {
        dg += g[i] * h[i];
        db += g[i];
        d[i] = g[i] * layer.gamma[c];
      }
    }
    grads.gamma[c] = static_cast<float>(dg);
    grads.beta[c] = static_cast<float>(db);
    if (cache.training) {
      normalize_backward(dxhat, cache.normalized, c, cache.inv_std[c], 1.0, dx);
    } else {
      for (std::size_t n = 0; n < s.n; ++n) {
        auto d = dxhat.channel(n, c);
        auto out = dx.channel(n, c);
        for (std::size_t i = 0; i < d.size(); ++i) out[i] = static_cast<float>(d[i] * cache.inv_std[c]);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

std::size_t PoolGeometry::out_extent(std::size_t extent) const {
  if (window == 0 || stride == 0 || extent < window || (extent - window) % stride != 0)
    throw Error(ErrorCode::ShapeMismatch, "pool window " + std::to_string(window) + "/stride " +
                                              std::to_string(stride) + " does not tile extent " +
                                              std::to_string(extent));
  return (extent - window) / stride + 1;
}

RealTensor avg_pool(const RealTensor& x, const PoolGeometry& p) {
  const Shape s = x.shape();
  const std::size_t oh = p.out_extent(s.h), ow = p.out_extent(s.w);
  RealTensor out({s.n, s.c, oh, ow});
  const double area = static_cast<double>(p.window * p.window);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double sum = 0.0;
          for (std::size_t dy = 0; dy < p.window; ++dy)
            for (std::size_t dx = 0; dx < p.window; ++dx) sum += x.at(n, c, oy * p.stride + dy, ox * p.stride + dx);
          out.at(n, c, oy, ox) = static_cast<float>(sum / area);
        }
  return out;
}

ComplexTensor avg_pool(const ComplexTensor& x, const PoolGeometry& p) {
  return ComplexTensor(avg_pool(x.re, p), avg_pool(x.im, p));
}

RealTensor avg_pool_backward(const RealTensor& grad_out, const PoolGeometry& p, const Shape& in_shape) {
  const std::size_t oh = p.out_extent(in_shape.h), ow = p.out_extent(in_shape.w);
  check_same(grad_out.shape(), Shape{in_shape.n, in_shape.c, oh, ow}, "avg pool grad_out");
  RealTensor gx(in_shape);
  const float scale = 1.0f / static_cast<float>(p.window * p.window);
  for (std::size_t n = 0; n < in_shape.n; ++n)
    for (std::size_t c = 0; c < in_shape.c; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const float g = grad_out.at(n, c, oy, ox) * scale;
          for (std::size_t dy = 0; dy < p.window; ++dy)
            for (std::size_t dx = 0; dx < p.window; ++dx) gx.at(n, c, oy * p.stride + dy, ox * p.stride + dx) += g;
        }
  return gx;
}

RealTensor max_pool(const RealTensor& x, const PoolGeometry& p) {
  const Shape s = x.shape();
  const std::size_t oh = p.out_extent(s.h), ow = p.out_extent(s.w);
  RealTensor out({s.n, s.c, oh, ow});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          for (std::size_t dy = 0; dy < p.window; ++dy)
            for (std::size_t dx = 0; dx < p.window; ++dx)
              best = std::max(best, x.at(n, c, oy * p.stride + dy, ox * p.stride + dx));
          out.at(n, c, oy, ox) = best;
        }
  return out;
}

ComplexTensor max_pool(const ComplexTensor& x, const PoolGeometry& p) {
  return ComplexTensor(max_pool(x.re, p), max_pool(x.im, p));
}

RealTensor max_pool_backward(const RealTensor& x, const RealTensor& grad_out, const PoolGeometry& p) {
  const Shape s = x.shape();
  const std::size_t oh = p.out_extent(s.h), ow = p.out_extent(s.w);
  check_same(grad_out.shape(), Shape{s.n, s.c, oh, ow}, "max pool grad_out");
  RealTensor gx(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t by = oy * p.stride, bx = ox * p.stride;
          for (std::size_t dy = 0; dy < p.window; ++dy)
            for (std::size_t dx = 0; dx < p.window; ++dx) {
              const std::size_t y = oy * p.stride + dy, xx = ox * p.stride + dx;
              if (x.at(n, c, y, xx) > x.at(n, c, by, bx)) {
                by = y;
                bx = xx;
              }
            }
          gx.at(n, c, by, bx) += grad_out.at(n, c, oy, ox);
        }
  return gx;
}

// ---------------------------------------------------------------------------

namespace {

using cd = std::complex<double>;

// Row-major out_len x in_len operator: forward DFT of length in_len, keep the
// centered out_len frequencies, inverse DFT of length out_len.
std::vector<cd> spectral_crop_operator(std::size_t in_len, std::size_t out_len) {
  std::vector<cd> a(out_len * in_len, cd{0.0, 0.0});
  const std::ptrdiff_t lo = -static_cast<std::ptrdiff_t>(out_len / 2);
  const std::ptrdiff_t hi = static_cast<std::ptrdiff_t>((out_len + 1) / 2) - 1;
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t m = 0; m < out_len; ++m)
    for (std::size_t n = 0; n < in_len; ++n) {
      cd sum{0.0, 0.0};
      for (std::ptrdiff_t f = lo; f <= hi; ++f) {
        const double phase = two_pi * static_cast<double>(f) *
                             (static_cast<double>(m) / out_len - static_cast<double>(n) / in_len);
        sum += std::polar(1.0, phase);
      }
      a[m * in_len + n] = sum / static_cast<double>(out_len);
    }
  return a;
}

template <class T>
void check_plane_sizes(const BasicComplexTensor<T>& x, std::size_t h, std::size_t w, std::size_t oh,
                       std::size_t ow) {
  if (oh == 0 || ow == 0 || oh > h || ow > w)
    throw Error(ErrorCode::ShapeMismatch, "spectral pool " + std::to_string(h) + "x" + std::to_string(w) + " -> " +
                                              std::to_string(oh) + "x" + std::to_string(ow));
  (void)x;
}

// y = scale * A_h * X * A_w^T  (adjoint: scale * A_h^H * X * conj(A_w))
template <class T>
BasicComplexTensor<T> apply_separable(const BasicComplexTensor<T>& x, const std::vector<cd>& ah,
                                      const std::vector<cd>& aw, std::size_t out_h, std::size_t out_w,
                                      double scale, bool adjoint) {
  const Shape s = x.shape();
  const std::size_t ih = s.h, iw = s.w;
  BasicComplexTensor<T> out(Shape{s.n, s.c, out_h, out_w});
  // Operator dims: forward A_h is out_h x ih; adjoint uses A_h^H (ih x ... ) with roles swapped.
  auto h_coef = [&](std::size_t p, std::size_t y) {
    return adjoint ? std::conj(ah[y * out_h + p]) : ah[p * ih + y];
  };
  auto w_coef = [&](std::size_t m, std::size_t xx) {
    return adjoint ? std::conj(aw[xx * out_w + m]) : aw[m * iw + xx];
  };
  std::vector<cd> plane(ih * iw), tmp(ih * out_w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      auto xr = x.re.channel(n, c), xi = x.im.channel(n, c);
      // The forward map sends the plane mean to itself; splitting it off keeps
      // constant planes exact.
      cd mean{0.0, 0.0};
      if (!adjoint) {
        for (std::size_t i = 0; i < plane.size(); ++i) mean += cd(xr[i], xi[i]);
        mean /= static_cast<double>(plane.size());
      }
      for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = cd(xr[i], xi[i]) - mean;
      for (std::size_t y = 0; y < ih; ++y)
        for (std::size_t m = 0; m < out_w; ++m) {
          cd acc{0.0, 0.0};
          for (std::size_t xx = 0; xx < iw; ++xx) acc += plane[y * iw + xx] * w_coef(m, xx);
          tmp[y * out_w + m] = acc;
        }
      auto yr = out.re.channel(n, c), yi = out.im.channel(n, c);
      for (std::size_t p = 0; p < out_h; ++p)
        for (std::size_t m = 0; m < out_w; ++m) {
          cd acc{0.0, 0.0};
          for (std::size_t y = 0; y < ih; ++y) acc += h_coef(p, y) * tmp[y * out_w + m];
          acc = acc * scale + mean;
          yr[p * out_w + m] = static_cast<T>(acc.real());
          yi[p * out_w + m] = static_cast<T>(acc.imag());
        }
    }
  return out;
}

}  // namespace

template <class T>
BasicComplexTensor<T> spectral_pool(const BasicComplexTensor<T>& x, std::size_t out_h, std::size_t out_w) {
  const Shape s = x.shape();
  check_plane_sizes(x, s.h, s.w, out_h, out_w);
  const double scale = static_cast<double>(out_h * out_w) / static_cast<double>(s.h * s.w);
  return apply_separable(x, spectral_crop_operator(s.h, out_h), spectral_crop_operator(s.w, out_w), out_h, out_w,
                         scale, false);
}

template <class T>
BasicComplexTensor<T> spectral_pool_backward(const BasicComplexTensor<T>& grad_out, std::size_t in_h,
                                             std::size_t in_w) {
  const Shape s = grad_out.shape();
  check_plane_sizes(grad_out, in_h, in_w, s.h, s.w);
  const double scale = static_cast<double>(s.h * s.w) / static_cast<double>(in_h * in_w);
  return apply_separable(grad_out, spectral_crop_operator(in_h, s.h), spectral_crop_operator(in_w, s.w), in_h,
                         in_w, scale, true);
}

template ComplexTensor spectral_pool(const ComplexTensor&, std::size_t, std::size_t);
template ComplexTensorD spectral_pool(const ComplexTensorD&, std::size_t, std::size_t);
template ComplexTensor spectral_pool_backward(const ComplexTensor&, std::size_t, std::size_t);
template ComplexTensorD spectral_pool_backward(const ComplexTensorD&, std::size_t, std::size_t);

// ---------------------------------------------------------------------------

RealTensor relu(const RealTensor& x) {
  RealTensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::max(0.0f, x[i]);
  return out;
}

ComplexTensor relu(const ComplexTensor& x) { return ComplexTensor(relu(x.re), relu(x.im)); }

RealTensor hardtanh(const RealTensor& x) {
  RealTensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i], -1.0f, 1.0f);
  return out;
}

ComplexTensor hardtanh(const ComplexTensor& x) { return ComplexTensor(hardtanh(x.re), hardtanh(x.im)); }

RealTensor gate_backward(const RealTensor& x, const RealTensor& grad_out, float lo, float hi) {
  check_same(x.shape(), grad_out.shape(), "activation backward");
  RealTensor gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = (x[i] > lo && x[i] < hi) ? grad_out[i] : 0.0f;
  return gx;
}

// ---------------------------------------------------------------------------

namespace {

void check_fc(const RealTensor& x, const FcLayer& layer) {
  const Shape s = x.shape();
  if (s.c * s.h * s.w != layer.in_features)
    throw Error(ErrorCode::ShapeMismatch, "FC expects " + std::to_string(layer.in_features) + " features, got " +
                                              std::to_string(s.c * s.h * s.w));
  if (layer.weights.size() != layer.in_features * layer.out_features || layer.bias.size() != layer.out_features)
    throw Error(ErrorCode::ShapeMismatch, "FC parameter sizes inconsistent");
}

}  // namespace

RealTensor fully_connected(const RealTensor& x, const FcLayer& layer) {
  check_fc(x, layer);
  const std::size_t batch = x.shape().n, in = layer.in_features;
  RealTensor out({batch, layer.out_features, 1, 1});
  for (std::size_t n = 0; n < batch; ++n) {
    const float* xp = x.data().data() + n * in;
    for (std::size_t o = 0; o < layer.out_features; ++o) {
      const float* wp = layer.weights.data() + o * in;
      double acc = layer.bias[o];
      for (std::size_t k = 0; k < in; ++k) acc += static_cast<double>(wp[k]) * xp[k];
      out.at(n, o, 0, 0) = static_cast<float>(acc);
    }
  }
  return out;
}

FcGrads fully_connected_backward(const RealTensor& x, const FcLayer& layer, const RealTensor& grad_out) {
  check_fc(x, layer);
  const std::size_t batch = x.shape().n, in = layer.in_features, outf = layer.out_features;
  check_same(grad_out.shape(), Shape{batch, outf, 1, 1}, "FC grad_out");
  FcGrads g;
  g.input = RealTensor(x.shape());
  g.weights.assign(outf * in, 0.0f);
  g.bias.assign(outf, 0.0f);
  for (std::size_t o = 0; o < outf; ++o) {
    double db = 0;
    for (std::size_t n = 0; n < batch; ++n) db += grad_out.at(n, o, 0, 0);
    g.bias[o] = static_cast<float>(db);
    for (std::size_t k = 0; k < in; ++k) {
      double dw = 0;
      for (std::size_t n = 0; n < batch; ++n) dw += static_cast<double>(grad_out.at(n, o, 0, 0)) * x[n * in + k];
      g.weights[o * in + k] = static_cast<float>(dw);
    }
  }
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t k = 0; k < in; ++k) {
      double acc = 0;
      for (std::size_t o = 0; o < outf; ++o)
        acc += static_cast<double>(layer.weights[o * in + k]) * grad_out.at(n, o, 0, 0);
      g.input[n * in + k] = static_cast<float>(acc);
    }
  return g;
}

}  // namespace bcnn
