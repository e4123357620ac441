// Copyright 2026 The mixpipe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable op set. Every op validates shapes up front (ShapeError names
// the op and both shapes), rejects non-finite outputs (NumericError), and
// records an exact backward closure when gradient recording applies.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mixpipe/tensor.hpp"

namespace mixpipe::ops {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr std::int64_t kIgnoreIndex = -1;

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x[n,in] * w[in,out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// tanh-approximated GELU.
Tensor gelu(const Tensor& x);

Tensor softmax(const Tensor& x);  // over the last axis
// Normalises over the last axis; gamma/beta of shape [d] may be undefined.
// A zero-variance row normalises to exactly zero before the affine terms.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

// table[V,d], ids in [0,V) -> [n,d]
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);

// Mean token cross-entropy of logits[n,V] against integer targets. Rows whose
// target is kIgnoreIndex are skipped; at least one row must remain.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);

// Mean along `axis` (the axis is removed; a full reduction yields shape [1]).
Tensor mean(const Tensor& x, std::size_t axis);
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

// Sequence-wise (axis 0) and channel-wise (axis 1) concatenation of rank-2 tensors.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Multi-head scaled dot-product attention on already-projected q[nq,d],
// k[nk,d], v[nk,d]. With `causal`, query i only sees keys j <= i (requires
// nq == nk).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 bool causal);

// Depthwise 3x3 convolution over a row-major grid stored as x[h*w, c] with
// zero padding; weight[9, c] is indexed by (dy+1)*3 + (dx+1).
Tensor depthwise_conv3x3(const Tensor& x, const Tensor& weight, std::size_t grid_h,
                         std::size_t grid_w);

// Rearranges a channel-last map x[h*w, c] (row-major grid) into
// non-overlapping patch rows [(h/p)*(w/p), p*p*c].
Tensor patchify(const Tensor& x, std::size_t grid_h, std::size_t grid_w, std::size_t patch);

}  // namespace mixpipe::ops
