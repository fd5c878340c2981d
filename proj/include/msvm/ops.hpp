#pragma once

// Tensor-level primitives and their vector-Jacobian products.
//
// Feature maps are channels-last [H, W, D]. Every primitive is a pure function;
// each `*_vjp` takes the forward inputs plus the output cotangent and returns
// cotangents shaped like the inputs.

#include <cstddef>

#include "msvm/tensor.hpp"

namespace msvm {

// out[.., j] = sum_i w[j, i] * x[.., i] + b[j]. `b` may be empty (no bias).
template <typename T>
Tensor<T> dense_affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
struct DenseGrads {
  Tensor<T> x, w, b;  // b empty when the forward had no bias
};

template <typename T>
DenseGrads<T> dense_affine_vjp(const Tensor<T>& x, const Tensor<T>& w, bool has_bias,
                               const Tensor<T>& gout);

// Per-channel cross-correlation of x [H,W,D] with k [Kh,Kw,D] (odd extents).
template <typename T>
Tensor<T> dwconv2d(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride, std::size_t padding);

template <typename T>
struct DwconvGrads {
  Tensor<T> x, k;
};

template <typename T>
DwconvGrads<T> dwconv2d_vjp(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride,
                            std::size_t padding, const Tensor<T>& gout);

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

// x[.., d] + b[d]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b);
template <typename T>
Tensor<T> add_bias_vjp_bias(const Tensor<T>& gout, std::size_t channels);

// Nearest-neighbour upsampling of x [h,w,D] to [H,W,D]; out[i,j] = x[i*h/H, j*w/W].
template <typename T>
Tensor<T> interpolate_nearest(const Tensor<T>& x, std::size_t H, std::size_t W);
template <typename T>
Tensor<T> interpolate_nearest_vjp(const Shape& x_shape, const Tensor<T>& gout);

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes over the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = kLayerNormEps);

template <typename T>
struct LayerNormGrads {
  Tensor<T> x, gamma, beta;
};

template <typename T>
LayerNormGrads<T> layer_norm_vjp(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& gout,
                                 double eps = kLayerNormEps);

enum class Activation { silu, gelu, sigmoid, relu, softplus, neg_exp };

const char* activation_name(Activation act);

// GELU uses the tanh approximation, consistently in forward and vjp.
template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act);
template <typename T>
Tensor<T> activate_vjp(const Tensor<T>& x, Activation act, const Tensor<T>& gout);

double softplus(double x);
double softplus_inverse(double y);

// Mean over H and W of x [H,W,D] -> [D].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_vjp(const Shape& x_shape, const Tensor<T>& gout);

// Non-overlapping KxK patches of x [H,W,C] -> [ceil(H/K), ceil(W/K), K*K*C], zero padded
// at the bottom/right. A KxK stride-K convolution is patchify followed by dense_affine.
template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t K);
template <typename T>
Tensor<T> patchify_vjp(const Shape& x_shape, std::size_t K, const Tensor<T>& gout);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// x[.., d] * g[d]
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& g);
template <typename T>
Tensor<T> scale_channels_vjp_gate(const Tensor<T>& x, const Tensor<T>& gout);

// x[.., begin:end]
template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> slice_last_vjp(const Shape& x_shape, std::size_t begin, const Tensor<T>& gout);

// -log softmax(logits)[label] as a one-element tensor.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t label);
template <typename T>
Tensor<T> softmax_cross_entropy_vjp(const Tensor<T>& logits, std::size_t label, T gout);

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

}  // namespace msvm
