#pragma once

// Differentiable tensor operations used by the network modules.
//
// Layout conventions: matrices are row-major [rows, cols]; feature maps are
// single images [channels, height, width].

#include <vector>

#include "posefree/autograd.hpp"

namespace posefree::ad {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sum of scalars, each weighted; used to assemble composite losses.
Tensor weighted_sum(const std::vector<Tensor>& terms, const std::vector<double>& weights);

// C[m,n] = A[m,k] B[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// Y[n,o] = X[n,i] W[i,o] + b[o]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// Adds row vector v[d] to every row of x[n,d].
Tensor add_row(const Tensor& x, const Tensor& v);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);

// Row-wise layer normalization with per-column gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
// Multi-head scaled dot-product self attention without masking; q,k,v are [n,d].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t end);
// Concatenates [C_i,H,W] maps along channels.
Tensor concat_channels(const std::vector<Tensor>& parts);
// Selects columns [begin,end) of a matrix.
Tensor slice_cols(const Tensor& x, std::int64_t begin, std::int64_t end);

// x[C,H,W], weight[O,C,k,k], bias[O]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);
Tensor upsample_nearest2x(const Tensor& x);
// Adds scale[c] * noise[h,w] to every channel c of x[C,H,W].
Tensor add_channel_noise(const Tensor& x, const Tensor& scale, const Tensor& noise);
// Adds bias[c] to every pixel of channel c.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// [H*W, 3] pixel rows <-> [3, H, W] planar maps.
Tensor hwc_to_chw(const Tensor& x, std::int64_t height, std::int64_t width);
Tensor chw_to_hwc(const Tensor& x);

Tensor mse(const Tensor& a, const Tensor& b);
// Sum_i a_i g_i with g constant: its gradient w.r.t. a is exactly g.
Tensor dot_constant(const Tensor& a, std::span<const double> g);

}  // namespace posefree::ad
