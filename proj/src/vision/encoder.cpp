// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/vision/encoder.hpp"

#include <cmath>

#include "mmlora/decoder/attention.hpp"
#include "mmlora/errors.hpp"

namespace mmlora {

void VisionEncoderConfig::validate() const {
  if (patch == 0 || crop_size % patch != 0) throw ConfigError("crop_size must be a multiple of the patch size");
  if (n_heads == 0 || width % n_heads != 0) throw ConfigError("width must be divisible by n_heads");
  if (max_crops_pretrain == 0 || max_crops_sft == 0) throw ConfigError("crop budgets must be >= 1");
}

VisionEncoderConfig VisionEncoderConfig::toy() {
  VisionEncoderConfig c;
  c.crop_size = 32;
  c.patch = 8;
  return c;
}

Tensor patchify(const Tensor& crop, std::size_t patch) {
  if (crop.rank() != 3 || crop.dim(2) != 3 || crop.dim(0) != crop.dim(1) || crop.dim(0) % patch != 0)
    throw DimensionError("crop must be [C, C, 3] with C divisible by " + std::to_string(patch) + ", got " +
                         shape_str(crop.shape()));
  const std::size_t c = crop.dim(0), side = c / patch, flat = patch * patch * 3;
  Tensor rows = ops::reshape(crop, {c, c * 3});
  std::vector<Tensor> patches;
  patches.reserve(side * side);
  for (std::size_t py = 0; py < side; ++py) {
    Tensor band = ops::slice_rows(rows, py * patch, (py + 1) * patch);
    for (std::size_t px = 0; px < side; ++px) {
      Tensor p = ops::slice_cols(band, px * patch * 3, (px + 1) * patch * 3);
      patches.push_back(ops::reshape(p, {1, flat}));
    }
  }
  return ops::concat_rows(patches);
}

PatchEncoder::PatchEncoder(VisionEncoderConfig config) : config_(config) {
  config_.validate();
  SplitMix64 rng(config_.seed);
  const std::size_t w = config_.width;
  patch_embed_ = Linear::init(config_.patch * config_.patch * 3, w, rng);
  position_ = normal_tensor({config_.n_patches(), w}, 0.02, rng);
  attn_norm_ = LayerNorm::init(w);
  qkv_ = Linear::init(w, 3 * w, rng);
  attn_out_ = Linear::init(w, w, rng);
  mlp_norm_ = LayerNorm::init(w);
  mlp_in_ = Linear::init(w, 4 * w, rng);
  mlp_out_ = Linear::init(4 * w, w, rng);
  final_norm_ = LayerNorm::init(w);
}

Tensor PatchEncoder::operator()(const Tensor& crop) const {
  if (crop.rank() != 3 || crop.dim(0) != config_.crop_size || crop.dim(1) != config_.crop_size)
    throw DimensionError("crop must be " + std::to_string(config_.crop_size) + "x" +
                         std::to_string(config_.crop_size) + "x3, got " + shape_str(crop.shape()));
  const std::size_t w = config_.width, hd = w / config_.n_heads;
  Tensor h = ops::add(patch_embed_(patchify(crop, config_.patch)), position_);
  Tensor qkv = qkv_(attn_norm_(h));
  Tensor attn = grouped_attention(ops::slice_cols(qkv, 0, w), ops::slice_cols(qkv, w, 2 * w),
                                  ops::slice_cols(qkv, 2 * w, 3 * w), {config_.n_heads, config_.n_heads, hd}, false);
  h = ops::add(h, attn_out_(attn));
  h = ops::add(h, mlp_out_(ops::gelu(mlp_in_(mlp_norm_(h)))));
  return final_norm_(h);
}

ParamList PatchEncoder::parameters() const {
  ParamList out;
  patch_embed_.collect("patch_embed", out);
  out.push_back({"position", position_});
  attn_norm_.collect("attn_norm", out);
  qkv_.collect("attn.qkv", out);
  attn_out_.collect("attn.out", out);
  mlp_norm_.collect("mlp_norm", out);
  mlp_in_.collect("mlp.in", out);
  mlp_out_.collect("mlp.out", out);
  final_norm_.collect("final_norm", out);
  return out;
}

MlpProjector make_vision_projector(const VisionEncoderConfig& encoder, std::size_t d_model, SplitMix64& rng) {
  return MlpProjector::init(encoder.width, d_model, d_model, rng);
}

}  // namespace mmlora
