#include "msvm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "msvm/errors.hpp"

namespace msvm {
namespace {

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(s));
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b));
}


template <typename T>
std::size_t leading(const Tensor<T>& x) {
  return x.size() / x.last();
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

double gelu_grad_scalar(double x) {
  const double inner = kGeluC * (x + 0.044715 * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double softplus(double x) { return x > 20.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double softplus_inverse(double y) {
  if (y <= 0) throw DomainError("softplus_inverse: argument must be positive");
  return y + std::log(-std::expm1(-y));
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw DomainError("convolution stride must be positive");
  const std::size_t padded = in + 2 * padding;
  if (padded < kernel) return 0;
  return (padded - kernel) / stride + 1;
}

template <typename T>
Tensor<T> dense_affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(w.shape(), 2, "dense_affine(W)");
  const std::size_t dout = w.extent(0), din = w.extent(1);
  if (x.empty() || x.last() != din)
    throw DimensionError("dense_affine: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  if (!b.empty() && b.shape() != Shape{dout})
    throw DimensionError("dense_affine: bias " + shape_str(b.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  Tensor<T> out(out_shape);
  const std::size_t rows = leading(x);
  const T* xp = x.data().data();
  const T* wp = w.data().data();
  T* op = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * din;
    T* orow = op + r * dout;
    for (std::size_t j = 0; j < dout; ++j) {
      const T* wr = wp + j * din;
      T acc = b.empty() ? T(0) : b[j];
      for (std::size_t i = 0; i < din; ++i) acc += wr[i] * xr[i];
      orow[j] = acc;
    }
  }
  return out;
}

template <typename T>
DenseGrads<T> dense_affine_vjp(const Tensor<T>& x, const Tensor<T>& w, bool has_bias,
                               const Tensor<T>& gout) {
  const std::size_t dout = w.extent(0), din = w.extent(1);
  const std::size_t rows = leading(x);
  if (gout.size() != rows * dout) throw DimensionError("dense_affine_vjp: cotangent " + shape_str(gout.shape()));
  DenseGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(w.shape()), has_bias ? Tensor<T>(Shape{dout}) : Tensor<T>()};
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * din;
    const T* gr = gout.data().data() + r * dout;
    T* gxr = g.x.data().data() + r * din;
    for (std::size_t j = 0; j < dout; ++j) {
      const T gj = gr[j];
      if (has_bias) g.b[j] += gj;
      const T* wr = w.data().data() + j * din;
      T* gwr = g.w.data().data() + j * din;
      for (std::size_t i = 0; i < din; ++i) {
        gxr[i] += gj * wr[i];
        gwr[i] += gj * xr[i];
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> dwconv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride, std::size_t padding) {
  require_rank(x.shape(), 3, "dwconv2d(x)");
  require_rank(k.shape(), 3, "dwconv2d(k)");
  const std::size_t H = x.extent(0), W = x.extent(1), D = x.extent(2);
  const std::size_t Kh = k.extent(0), Kw = k.extent(1);
  if (k.extent(2) != D)
    throw DimensionError("dwconv2d: kernel " + shape_str(k.shape()) + " vs input " + shape_str(x.shape()));
  if (Kh % 2 == 0 || Kw % 2 == 0) throw DimensionError("dwconv2d: kernel extents must be odd");
  const std::size_t Ho = conv_out_extent(H, Kh, stride, padding);
  const std::size_t Wo = conv_out_extent(W, Kw, stride, padding);
  if (Ho == 0 || Wo == 0)
    throw DimensionError("dwconv2d: empty output for input " + shape_str(x.shape()) + " and kernel " +
                         shape_str(k.shape()));
  Tensor<T> out(Shape{Ho, Wo, D});
  for (std::size_t i = 0; i < Ho; ++i) {
    for (std::size_t j = 0; j < Wo; ++j) {
      T* o = &out.at(i, j, 0);
      for (std::size_t a = 0; a < Kh; ++a) {
        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(i * stride + a) - static_cast<std::ptrdiff_t>(padding);
        if (p < 0 || p >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t b = 0; b < Kw; ++b) {
          const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(j * stride + b) - static_cast<std::ptrdiff_t>(padding);
          if (q < 0 || q >= static_cast<std::ptrdiff_t>(W)) continue;
          const T* xv = &x.at(p, q, 0);
          const T* kv = &k.at(a, b, 0);
          for (std::size_t d = 0; d < D; ++d) o[d] += xv[d] * kv[d];
        }
      }
    }
  }
  return out;
}

template <typename T>
DwconvGrads<T> dwconv2d_vjp(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride, std::size_t padding,
                            const Tensor<T>& gout) {
  const std::size_t H = x.extent(0), W = x.extent(1), D = x.extent(2);
  const std::size_t Kh = k.extent(0), Kw = k.extent(1);
  const std::size_t Ho = gout.extent(0), Wo = gout.extent(1);
  DwconvGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(k.shape())};
  for (std::size_t i = 0; i < Ho; ++i) {
    for (std::size_t j = 0; j < Wo; ++j) {
      const T* go = &gout.at(i, j, 0);
      for (std::size_t a = 0; a < Kh; ++a) {
        const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(i * stride + a) - static_cast<std::ptrdiff_t>(padding);
        if (p < 0 || p >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t b = 0; b < Kw; ++b) {
          const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(j * stride + b) - static_cast<std::ptrdiff_t>(padding);
          if (q < 0 || q >= static_cast<std::ptrdiff_t>(W)) continue;
          const T* xv = &x.at(p, q, 0);
          const T* kv = &k.at(a, b, 0);
          T* gx = &g.x.at(p, q, 0);
          T* gk = &g.k.at(a, b, 0);
          for (std::size_t d = 0; d < D; ++d) {
            gx[d] += go[d] * kv[d];
            gk[d] += go[d] * xv[d];
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (b.shape() != Shape{x.last()})
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
  Tensor<T> out = x;
  const std::size_t D = x.last();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % D];
  return out;
}

template <typename T>
Tensor<T> add_bias_vjp_bias(const Tensor<T>& gout, std::size_t channels) {
  Tensor<T> gb(Shape{channels});
  for (std::size_t i = 0; i < gout.size(); ++i) gb[i % channels] += gout[i];
  return gb;
}

template <typename T>
Tensor<T> interpolate_nearest(const Tensor<T>& x, std::size_t H, std::size_t W) {
  require_rank(x.shape(), 3, "interpolate_nearest");
  const std::size_t h = x.extent(0), w = x.extent(1), D = x.extent(2);
  if (H == 0 || W == 0) throw DimensionError("interpolate_nearest: zero target extent");
  if (H < h || W < w)
    throw DimensionError("interpolate_nearest: upsampling only, " + shape_str(x.shape()) + " -> [" +
                         std::to_string(H) + "," + std::to_string(W) + "]");
  Tensor<T> out(Shape{H, W, D});
  for (std::size_t i = 0; i < H; ++i) {
    const std::size_t si = i * h / H;
    for (std::size_t j = 0; j < W; ++j) {
      const std::size_t sj = j * w / W;
      std::copy_n(&x.at(si, sj, 0), D, &out.at(i, j, 0));
    }
  }
  return out;
}

template <typename T>
Tensor<T> interpolate_nearest_vjp(const Shape& x_shape, const Tensor<T>& gout) {
  const std::size_t h = x_shape[0], w = x_shape[1], D = x_shape[2];
  const std::size_t H = gout.extent(0), W = gout.extent(1);
  Tensor<T> gx(x_shape);
  for (std::size_t i = 0; i < H; ++i) {
    const std::size_t si = i * h / H;
    for (std::size_t j = 0; j < W; ++j) {
      const std::size_t sj = j * w / W;
      const T* g = &gout.at(i, j, 0);
      T* t = &gx.at(si, sj, 0);
      for (std::size_t d = 0; d < D; ++d) t[d] += g[d];
    }
  }
  return gx;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  const std::size_t D = x.last();
  if (gamma.shape() != Shape{D} || beta.shape() != Shape{D})
    throw DimensionError("layer_norm: affine " + shape_str(gamma.shape()) + " vs input " + shape_str(x.shape()));
  Tensor<T> out(x.shape());
  const std::size_t rows = leading(x);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * D;
    T* o = out.data().data() + r * D;
    double mean = 0;
    for (std::size_t i = 0; i < D; ++i) mean += xr[i];
    mean /= static_cast<double>(D);
    double var = 0;
    for (std::size_t i = 0; i < D; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(D);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < D; ++i)
      o[i] = static_cast<T>((xr[i] - mean) * inv * gamma[i] + beta[i]);
  }
  return out;
}

template <typename T>
LayerNormGrads<T> layer_norm_vjp(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& gout,
                                 double eps) {
  const std::size_t D = x.last();
  const std::size_t rows = leading(x);
  LayerNormGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(Shape{D}), Tensor<T>(Shape{D})};
  std::vector<double> xhat(D), gxhat(D);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * D;
    const T* gr = gout.data().data() + r * D;
    double mean = 0;
    for (std::size_t i = 0; i < D; ++i) mean += xr[i];
    mean /= static_cast<double>(D);
    double var = 0;
    for (std::size_t i = 0; i < D; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(D);
    const double inv = 1.0 / std::sqrt(var + eps);
    double m1 = 0, m2 = 0;
    for (std::size_t i = 0; i < D; ++i) {
      xhat[i] = (xr[i] - mean) * inv;
      gxhat[i] = gr[i] * static_cast<double>(gamma[i]);
      g.gamma[i] += static_cast<T>(gr[i] * xhat[i]);
      g.beta[i] += gr[i];
      m1 += gxhat[i];
      m2 += gxhat[i] * xhat[i];
    }
    m1 /= static_cast<double>(D);
    m2 /= static_cast<double>(D);
    T* gx = g.x.data().data() + r * D;
    for (std::size_t i = 0; i < D; ++i) gx[i] = static_cast<T>(inv * (gxhat[i] - m1 - xhat[i] * m2));
  }
  return g;
}

const char* activation_name(Activation act) {
  switch (act) {
    case Activation::silu: return "silu";
    case Activation::gelu: return "gelu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
    case Activation::neg_exp: return "neg_exp";
  }
  return "?";
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    double r = 0;
    switch (act) {
      case Activation::silu: r = v * sigmoid_scalar(v); break;
      case Activation::gelu: r = gelu_scalar(v); break;
      case Activation::sigmoid: r = sigmoid_scalar(v); break;
      case Activation::relu: r = v > 0 ? v : 0.0; break;
      case Activation::softplus: r = softplus(v); break;
      case Activation::neg_exp: r = -std::exp(v); break;
    }
    out[i] = static_cast<T>(r);
  }
  return out;
}

template <typename T>
Tensor<T> activate_vjp(const Tensor<T>& x, Activation act, const Tensor<T>& gout) {
  require_same(x.shape(), gout.shape(), "activate_vjp");
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    double d = 0;
    switch (act) {
      case Activation::silu: {
        const double s = sigmoid_scalar(v);
        d = s * (1.0 + v * (1.0 - s));
        break;
      }
      case Activation::gelu: d = gelu_grad_scalar(v); break;
      case Activation::sigmoid: {
        const double s = sigmoid_scalar(v);
        d = s * (1.0 - s);
        break;
      }
      case Activation::relu: d = v > 0 ? 1.0 : 0.0; break;
      case Activation::softplus: d = sigmoid_scalar(v); break;
      case Activation::neg_exp: d = -std::exp(v); break;
    }
    g[i] = static_cast<T>(gout[i] * d);
  }
  return g;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x.shape(), 3, "global_avg_pool");
  const std::size_t D = x.extent(2), n = x.extent(0) * x.extent(1);
  std::vector<double> acc(D, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t d = 0; d < D; ++d) acc[d] += x[t * D + d];
  Tensor<T> out(Shape{D});
  for (std::size_t d = 0; d < D; ++d) out[d] = static_cast<T>(acc[d] / static_cast<double>(n));
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_vjp(const Shape& x_shape, const Tensor<T>& gout) {
  const std::size_t D = x_shape[2], n = x_shape[0] * x_shape[1];
  Tensor<T> g(x_shape);
  const T inv = T(1) / static_cast<T>(n);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t d = 0; d < D; ++d) g[t * D + d] = gout[d] * inv;
  return g;
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t K) {
  require_rank(x.shape(), 3, "patchify");
  if (K == 0) throw DomainError("patchify: patch size must be positive");
  const std::size_t H = x.extent(0), W = x.extent(1), C = x.extent(2);
  const std::size_t Ho = (H + K - 1) / K, Wo = (W + K - 1) / K;
  Tensor<T> out(Shape{Ho, Wo, K * K * C});
  for (std::size_t i = 0; i < Ho; ++i)
    for (std::size_t j = 0; j < Wo; ++j) {
      T* o = &out.at(i, j, 0);
      for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = 0; b < K; ++b) {
          const std::size_t p = i * K + a, q = j * K + b;
          if (p >= H || q >= W) continue;
          std::copy_n(&x.at(p, q, 0), C, o + (a * K + b) * C);
        }
    }
  return out;
}

template <typename T>
Tensor<T> patchify_vjp(const Shape& x_shape, std::size_t K, const Tensor<T>& gout) {
  const std::size_t H = x_shape[0], W = x_shape[1], C = x_shape[2];
  Tensor<T> g(x_shape);
  for (std::size_t i = 0; i < gout.extent(0); ++i)
    for (std::size_t j = 0; j < gout.extent(1); ++j) {
      const T* go = &gout.at(i, j, 0);
      for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = 0; b < K; ++b) {
          const std::size_t p = i * K + a, q = j * K + b;
          if (p >= H || q >= W) continue;
          std::copy_n(go + (a * K + b) * C, C, &g.at(p, q, 0));
        }
    }
  return g;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "add");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a.shape(), b.shape(), "mul");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& g) {
  if (g.shape() != Shape{x.last()})
    throw DimensionError("scale_channels: gate " + shape_str(g.shape()) + " vs input " + shape_str(x.shape()));
  Tensor<T> out = x;
  const std::size_t D = x.last();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= g[i % D];
  return out;
}

template <typename T>
Tensor<T> scale_channels_vjp_gate(const Tensor<T>& x, const Tensor<T>& gout) {
  const std::size_t D = x.last();
  Tensor<T> gg(Shape{D});
  for (std::size_t i = 0; i < x.size(); ++i) gg[i % D] += gout[i] * x[i];
  return gg;
}

template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  const std::size_t D = x.last();
  if (begin >= end || end > D)
    throw DimensionError("slice_last: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") outside " + shape_str(x.shape()));
  Shape s = x.shape();
  s.back() = end - begin;
  Tensor<T> out(s);
  const std::size_t rows = leading(x), w = end - begin;
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data().data() + r * D + begin, w, out.data().data() + r * w);
  return out;
}

template <typename T>
Tensor<T> slice_last_vjp(const Shape& x_shape, std::size_t begin, const Tensor<T>& gout) {
  Tensor<T> g(x_shape);
  const std::size_t D = x_shape.back(), w = gout.last();
  const std::size_t rows = g.size() / D;
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(gout.data().data() + r * w, w, g.data().data() + r * D + begin);
  return g;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits.shape(), 1, "softmax");
  double mx = logits[0];
  for (auto v : logits.data()) mx = std::max<double>(mx, v);
  double z = 0;
  for (auto v : logits.data()) z += std::exp(v - mx);
  Tensor<T> p(logits.shape());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<T>(std::exp(logits[i] - mx) / z);
  return p;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t label) {
  require_rank(logits.shape(), 1, "softmax_cross_entropy");
  if (label >= logits.size()) throw DimensionError("softmax_cross_entropy: label out of range");
  double mx = logits[0];
  for (auto v : logits.data()) mx = std::max<double>(mx, v);
  double z = 0;
  for (auto v : logits.data()) z += std::exp(v - mx);
  return Tensor<T>::scalar(static_cast<T>(std::log(z) + mx - logits[label]));
}

template <typename T>
Tensor<T> softmax_cross_entropy_vjp(const Tensor<T>& logits, std::size_t label, T gout) {
  Tensor<T> g = softmax(logits);
  g[label] -= T(1);
  for (auto& v : g.data()) v *= gout;
  return g;
}

#define MSVM_INSTANTIATE_OPS(T)                                                                          \
  template Tensor<T> dense_affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template DenseGrads<T> dense_affine_vjp(const Tensor<T>&, const Tensor<T>&, bool, const Tensor<T>&);   \
  template Tensor<T> dwconv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);             \
  template DwconvGrads<T> dwconv2d_vjp(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t,     \
                                       const Tensor<T>&);                                                \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> add_bias_vjp_bias(const Tensor<T>&, std::size_t);                                   \
  template Tensor<T> interpolate_nearest(const Tensor<T>&, std::size_t, std::size_t);                    \
  template Tensor<T> interpolate_nearest_vjp(const Shape&, const Tensor<T>&);                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);           \
  template LayerNormGrads<T> layer_norm_vjp(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double); \
  template Tensor<T> activate(const Tensor<T>&, Activation);                                             \
  template Tensor<T> activate_vjp(const Tensor<T>&, Activation, const Tensor<T>&);                       \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                  \
  template Tensor<T> global_avg_pool_vjp(const Shape&, const Tensor<T>&);                                \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                            \
  template Tensor<T> patchify_vjp(const Shape&, std::size_t, const Tensor<T>&);                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                            \
  template Tensor<T> scale_channels(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale_channels_vjp_gate(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> slice_last(const Tensor<T>&, std::size_t, std::size_t);                             \
  template Tensor<T> slice_last_vjp(const Shape&, std::size_t, const Tensor<T>&);                        \
  template Tensor<T> softmax(const Tensor<T>&);                                                          \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> softmax_cross_entropy_vjp(const Tensor<T>&, std::size_t, T);

MSVM_INSTANTIATE_OPS(float)
MSVM_INSTANTIATE_OPS(double)

}  // namespace msvm
