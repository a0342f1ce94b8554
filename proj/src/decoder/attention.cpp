// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/decoder/attention.hpp"

#include <cmath>
#include <numeric>

#include "mmlora/errors.hpp"
#include "mmlora/numerics/ops.hpp"

namespace mmlora {

std::size_t rotary_dim_count(double rotary_fraction, std::size_t head_dim) {
  if (!(rotary_fraction >= 0.0 && rotary_fraction <= 1.0)) throw ConfigError("rotary_fraction must lie in [0, 1]");
  const auto dims = static_cast<std::size_t>(std::lround(rotary_fraction * static_cast<double>(head_dim)));
  if (dims % 2 != 0) throw ConfigError("rotary dim count " + std::to_string(dims) + " is odd");
  return dims;
}

Tensor apply_fractional_rope(const Tensor& x, std::size_t n_heads, std::size_t head_dim, double rotary_fraction,
                             std::span<const std::size_t> positions) {
  const std::size_t dims = rotary_dim_count(rotary_fraction, head_dim);
  if (dims == 0) return x;
  return ops::rope(x, n_heads, head_dim, dims, positions, 10000.0);
}

std::vector<std::size_t> position_range(std::size_t start, std::size_t count) {
  std::vector<std::size_t> p(count);
  std::iota(p.begin(), p.end(), start);
  return p;
}

Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, const HeadLayout& layout,
                         bool causal) {
  const auto [n_q, n_kv, d] = layout;
  if (n_kv == 0 || n_q % n_kv != 0) throw ConfigError("n_q_heads must be a multiple of n_kv_heads");
  if (q.dim(1) != n_q * d || k.dim(1) != n_kv * d || v.dim(1) != n_kv * d) {
    throw DimensionError("grouped_attention: projection widths do not match the head layout");
  }
  if (k.dim(0) != v.dim(0) || k.dim(0) < q.dim(0)) throw DimensionError("grouped_attention: bad key length");
  const std::size_t group = n_q / n_kv;
  const std::size_t offset = k.dim(0) - q.dim(0);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<Tensor> kv_k(n_kv), kv_v(n_kv);
  for (std::size_t g = 0; g < n_kv; ++g) {
    kv_k[g] = ops::slice_cols(k, g * d, (g + 1) * d);
    kv_v[g] = ops::slice_cols(v, g * d, (g + 1) * d);
  }
  std::vector<Tensor> heads;
  heads.reserve(n_q);
  for (std::size_t h = 0; h < n_q; ++h) {
    const std::size_t g = h / group;
    Tensor scores = ops::scale(ops::matmul_nt(ops::slice_cols(q, h * d, (h + 1) * d), kv_k[g]), inv_sqrt);
    if (causal) scores = ops::causal_mask(scores, offset);
    heads.push_back(ops::matmul(ops::softmax(scores, 1), kv_v[g]));
  }
  return heads.size() == 1 ? heads.front() : ops::concat_cols(heads);
}

}  // namespace mmlora
