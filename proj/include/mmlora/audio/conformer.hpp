// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "mmlora/numerics/nn.hpp"

namespace mmlora {

struct ConformerConfig {
  std::size_t n_mels = 80;
  std::size_t n_blocks = 2;
  std::size_t attn_dim = 64;
  std::size_t ff_dim = 96;
  std::size_t n_heads = 4;
  std::size_t conv_kernel = 15;
  std::array<std::size_t, 3> subsample_strides = {2, 2, 2};
  std::uint64_t seed = 1;

  /// Throws ConfigError on a broken invariant (including an even kernel).
  void validate() const;
  std::size_t head_dim() const { return attn_dim / n_heads; }

  static ConformerConfig toy();
  /// 24 blocks, 1024 wide, 1536 feed-forward, 16 heads.
  static ConformerConfig full_scale();
};

/// ceil(ceil(ceil(T/2)/2)/2): three kernel-3, stride-2, padding-1 convolutions.
std::size_t subsample_length(std::size_t frames);

/// Three strided conv1d layers with GELU between them; [T, n_mels] -> [T', attn_dim].
struct ConvSubsampler {
  std::array<Tensor, 3> weight;  // [out, 3, in]
  std::array<Tensor, 3> bias;

  static ConvSubsampler init(const ConformerConfig& config, SplitMix64& rng);
  Tensor operator()(const Tensor& features) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct FeedForward {
  LayerNorm norm;
  Linear in;
  Linear out;

  Tensor operator()(const Tensor& x) const { return out(ops::silu(in(norm(x)))); }
  void collect(const std::string& prefix, ParamList& out_params) const;
};

/// Macaron block: x + FF/2, x + MHSA, x + conv module, x + FF/2, then norm.
struct ConformerBlock {
  FeedForward ff1;
  LayerNorm attn_norm;
  Linear qkv;
  Linear attn_out;
  LayerNorm conv_norm;
  Linear pointwise_in;  // d -> 2d, then GLU
  Tensor depthwise_weight;  // [K, d]
  Tensor depthwise_bias;
  LayerNorm conv_inner_norm;
  Linear pointwise_out;
  FeedForward ff2;
  LayerNorm final_norm;

  static ConformerBlock init(const ConformerConfig& config, SplitMix64& rng);
  Tensor operator()(const Tensor& x, const ConformerConfig& config) const;
  void collect(const std::string& prefix, ParamList& out) const;
  /// Zeroes the four residual branch outputs, leaving only the final norm.
  void zero_branch_outputs();
};

class AudioEncoder {
 public:
  explicit AudioEncoder(ConformerConfig config);

  const ConformerConfig& config() const { return config_; }
  /// [T, n_mels] features -> [ceil(T/8), attn_dim].
  Tensor operator()(const Tensor& features) const;
  /// Length-preserving stack over already subsampled input.
  Tensor encode_blocks(const Tensor& x) const;

  const ConvSubsampler& subsampler() const { return subsampler_; }
  std::vector<ConformerBlock>& mutable_blocks() { return blocks_; }
  const std::vector<ConformerBlock>& blocks() const { return blocks_; }
  ParamList parameters() const;

 private:
  ConformerConfig config_;
  ConvSubsampler subsampler_;
  std::vector<ConformerBlock> blocks_;
};

/// Two-layer MLP from encoder width to decoder width.
MlpProjector make_audio_projector(const ConformerConfig& encoder, std::size_t d_model, SplitMix64& rng);

struct AudioBudget {
  std::size_t frames = 0;
  std::size_t tokens = 0;
  bool fits = false;
};

/// Tokens for a clip of the given length at 10 ms frames and 8x subsampling.
AudioBudget audio_token_budget(double duration_s, std::size_t context_tokens, std::size_t reserved_text = 0);
/// Longest clip, in seconds, whose tokens fit the context after the reserve.
double max_audio_seconds(std::size_t context_tokens, std::size_t reserved_text = 0);
/// Start time of each encoder token, index * 80 ms.
std::vector<double> token_timestamps_ms(std::size_t tokens);

}  // namespace mmlora
