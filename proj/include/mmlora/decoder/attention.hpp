// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmlora/numerics/tensor.hpp"

namespace mmlora {

struct HeadLayout {
  std::size_t n_q_heads;
  std::size_t n_kv_heads;
  std::size_t head_dim;
};

/// Rotary dims for a fraction of head_dim; throws ConfigError if odd.
std::size_t rotary_dim_count(double rotary_fraction, std::size_t head_dim);

/// Rotates the leading rotary_fraction of each head (base 10000). x is
/// [T, heads * head_dim]; the trailing dims of every head are returned as is.
Tensor apply_fractional_rope(const Tensor& x, std::size_t n_heads, std::size_t head_dim, double rotary_fraction,
                             std::span<const std::size_t> positions);

/// Scaled dot-product attention where query head h reads kv head
/// h / (n_q / n_kv) (contiguous grouping).
///
/// q is [T, n_q * d], k and v are [S, n_kv * d] with S >= T. When causal,
/// query row i sits at absolute position (S - T) + i and sees keys 0..that.
Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, const HeadLayout& layout,
                         bool causal);

std::vector<std::size_t> position_range(std::size_t start, std::size_t count);

}  // namespace mmlora
