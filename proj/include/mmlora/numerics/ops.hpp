// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mmlora/numerics/tensor.hpp"

namespace mmlora::ops {

// Matrix products. All operands are rank-2.
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T
Tensor transpose(const Tensor& a);

/// y = x W^T + b, with W stored [out, in]. Bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// x[T,n] + b[n] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
Tensor reshape(const Tensor& x, Shape shape);

// Activations.
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Gated linear unit over the last axis: first half * sigmoid(second half).
Tensor glu(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// x[T,Cin] with weight [Cout, K, Cin] and bias [Cout] (bias may be undefined).
/// Output length floor((T + 2p - K)/stride) + 1.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t padding);
/// Per-channel convolution, weight [K, C], odd K, same padding.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Row/column plumbing for rank-2 tensors.
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Copy of base with rows [start, start + src.rows) replaced by src.
Tensor splice_rows(const Tensor& base, std::size_t start, const Tensor& src);

/// Sets entries (i, j) with j > i + offset to a large negative constant so a
/// following softmax assigns them zero weight. Gradient through masked
/// entries is zero.
Tensor causal_mask(const Tensor& scores, std::size_t offset);

/// Rotates the first rotary_dims of every head pairwise (2i, 2i+1) by
/// position * base^(-2i/rotary_dims); the trailing dims pass through.
/// x is [T, n_heads * head_dim] (equivalently [T, n_heads, head_dim]).
Tensor rope(const Tensor& x, std::size_t n_heads, std::size_t head_dim, std::size_t rotary_dims,
            std::span<const std::size_t> positions, double base = 10000.0);

struct MaskedLoss {
  Tensor loss;             // scalar
  bool all_masked = false;  // true when no position contributed
  std::size_t counted = 0;
};

/// Mean token NLL over positions where mask is nonzero. An all-zero mask
/// yields a constant zero loss with all_masked set.
MaskedLoss cross_entropy_masked(const Tensor& logits, std::span<const std::int64_t> targets,
                                std::span<const std::uint8_t> mask);

}  // namespace mmlora::ops
