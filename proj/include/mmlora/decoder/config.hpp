// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>

#include <nlohmann/json_fwd.hpp>

namespace mmlora {

/// Hyperparameters of the frozen language core.
struct DecoderConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_q_heads = 8;
  std::size_t n_kv_heads = 2;
  double rotary_fraction = 0.75;
  std::size_t vocab_size = 512;
  std::size_t max_context = 512;
  std::size_t mlp_hidden = 256;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_q_heads; }
  std::size_t rotary_dims() const;
  std::size_t group_size() const { return n_q_heads / n_kv_heads; }
  std::size_t qkv_width() const { return (n_q_heads + 2 * n_kv_heads) * head_dim(); }

  /// Throws ConfigError on any broken invariant.
  void validate() const;

  /// Desk-scale default used by tests and the CLI.
  static DecoderConfig toy();
  /// 3.8B reference shape (32 layers, 3072 wide, 24/8 heads, 75% rotary).
  static DecoderConfig full_scale();

  nlohmann::json to_json() const;
  /// Requires exactly the nine checkpoint keys.
  static DecoderConfig from_json(const nlohmann::json& j);

  bool operator==(const DecoderConfig&) const = default;
};

/// Peak learning rate power law B * D^-0.32.
double peak_lr(double b, double tokens);

}  // namespace mmlora
