// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "mmlora/numerics/nn.hpp"

namespace mmlora {

struct VisionEncoderConfig {
  std::size_t crop_size = 448;
  std::size_t patch = 32;
  std::size_t width = 32;
  std::size_t n_heads = 4;
  std::size_t max_crops_pretrain = 16;
  std::size_t max_crops_sft = 36;
  std::uint64_t seed = 2;

  void validate() const;
  std::size_t patches_per_side() const { return crop_size / patch; }
  std::size_t n_patches() const { return patches_per_side() * patches_per_side(); }

  /// 32 pixel crops of 8 pixel patches: 16 tokens per crop.
  static VisionEncoderConfig toy();
};

/// Stand-in for a pretrained vision tower: patch flatten, linear embed,
/// position embedding, then one pre-norm attention + MLP block.
class PatchEncoder {
 public:
  explicit PatchEncoder(VisionEncoderConfig config);

  const VisionEncoderConfig& config() const { return config_; }
  /// [C, C, 3] -> [n_patches, width].
  Tensor operator()(const Tensor& crop) const;
  ParamList parameters() const;

  Linear& patch_embed() { return patch_embed_; }

 private:
  VisionEncoderConfig config_;
  Linear patch_embed_;
  Tensor position_;
  LayerNorm attn_norm_;
  Linear qkv_;
  Linear attn_out_;
  LayerNorm mlp_norm_;
  Linear mlp_in_;
  Linear mlp_out_;
  LayerNorm final_norm_;
};

/// Non-overlapping patches, each flattened as (row, col, channel).
Tensor patchify(const Tensor& crop, std::size_t patch);

MlpProjector make_vision_projector(const VisionEncoderConfig& encoder, std::size_t d_model, SplitMix64& rng);

}  // namespace mmlora
