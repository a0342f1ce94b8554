// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/audio/conformer.hpp"

#include <cmath>

#include "mmlora/decoder/attention.hpp"
#include "mmlora/errors.hpp"

namespace mmlora {
namespace {

constexpr std::size_t kSubsampleKernel = 3;
constexpr std::size_t kSubsamplePadding = 1;
constexpr double kFramesPerSecond = 100.0;
constexpr std::size_t kTokenMs = 80;

void zero(Tensor& t) {
  for (auto& v : t.mutable_data()) v = 0.0;
}

void zero(Linear& l) {
  zero(l.weight);
  if (l.bias.defined()) zero(l.bias);
}

}  // namespace

void ConformerConfig::validate() const {
  if (n_heads == 0 || attn_dim % n_heads != 0) throw ConfigError("attn_dim must be divisible by n_heads");
  if (head_dim() % 2 != 0) throw ConfigError("conformer head_dim must be even for rotary attention");
  if (conv_kernel % 2 == 0) throw ConfigError("conv_kernel must be odd, got " + std::to_string(conv_kernel));
  if (subsample_strides[0] * subsample_strides[1] * subsample_strides[2] != 8)
    throw ConfigError("subsample strides must multiply to 8");
  if (n_mels == 0 || ff_dim == 0) throw ConfigError("n_mels and ff_dim must be >= 1");
}

ConformerConfig ConformerConfig::toy() { return ConformerConfig{}; }

ConformerConfig ConformerConfig::full_scale() {
  ConformerConfig c;
  c.n_blocks = 24;
  c.attn_dim = 1024;
  c.ff_dim = 1536;
  c.n_heads = 16;
  return c;
}

std::size_t subsample_length(std::size_t frames) {
  if (frames == 0) throw InputTooShortError("subsampling needs at least one frame");
  for (int i = 0; i < 3; ++i) frames = ops::conv1d_output_length(frames, kSubsampleKernel, 2, kSubsamplePadding);
  return frames;
}

ConvSubsampler ConvSubsampler::init(const ConformerConfig& config, SplitMix64& rng) {
  ConvSubsampler s;
  std::size_t in = config.n_mels;
  for (std::size_t i = 0; i < 3; ++i) {
    const double std = 1.0 / std::sqrt(static_cast<double>(in * kSubsampleKernel));
    s.weight[i] = normal_tensor({config.attn_dim, kSubsampleKernel, in}, std, rng);
    s.bias[i] = Tensor::zeros({config.attn_dim});
    in = config.attn_dim;
  }
  return s;
}

Tensor ConvSubsampler::operator()(const Tensor& features) const {
  Tensor h = features;
  for (std::size_t i = 0; i < 3; ++i) {
    h = ops::conv1d(h, weight[i], bias[i], 2, kSubsamplePadding);
    if (i < 2) h = ops::gelu(h);
  }
  return h;
}

void ConvSubsampler::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < 3; ++i) {
    out.push_back({prefix + ".conv" + std::to_string(i) + ".weight", weight[i]});
    out.push_back({prefix + ".conv" + std::to_string(i) + ".bias", bias[i]});
  }
}

void FeedForward::collect(const std::string& prefix, ParamList& out_params) const {
  norm.collect(prefix + ".norm", out_params);
  in.collect(prefix + ".in", out_params);
  out.collect(prefix + ".out", out_params);
}

ConformerBlock ConformerBlock::init(const ConformerConfig& c, SplitMix64& rng) {
  const std::size_t d = c.attn_dim;
  auto ff = [&] { return FeedForward{LayerNorm::init(d), Linear::init(d, c.ff_dim, rng), Linear::init(c.ff_dim, d, rng)}; };
  ConformerBlock b;
  b.ff1 = ff();
  b.attn_norm = LayerNorm::init(d);
  b.qkv = Linear::init(d, 3 * d, rng);
  b.attn_out = Linear::init(d, d, rng);
  b.conv_norm = LayerNorm::init(d);
  b.pointwise_in = Linear::init(d, 2 * d, rng);
  b.depthwise_weight = normal_tensor({c.conv_kernel, d}, 1.0 / std::sqrt(static_cast<double>(c.conv_kernel)), rng);
  b.depthwise_bias = Tensor::zeros({d});
  b.conv_inner_norm = LayerNorm::init(d);
  b.pointwise_out = Linear::init(d, d, rng);
  b.ff2 = ff();
  b.final_norm = LayerNorm::init(d);
  return b;
}

Tensor ConformerBlock::operator()(const Tensor& x, const ConformerConfig& c) const {
  const std::size_t d = c.attn_dim;
  Tensor h = ops::add(x, ops::scale(ff1(x), 0.5));

  Tensor qkv_out = qkv(attn_norm(h));
  const auto pos = position_range(0, x.dim(0));
  Tensor q = apply_fractional_rope(ops::slice_cols(qkv_out, 0, d), c.n_heads, c.head_dim(), 1.0, pos);
  Tensor k = apply_fractional_rope(ops::slice_cols(qkv_out, d, 2 * d), c.n_heads, c.head_dim(), 1.0, pos);
  Tensor v = ops::slice_cols(qkv_out, 2 * d, 3 * d);
  Tensor attn = grouped_attention(q, k, v, {c.n_heads, c.n_heads, c.head_dim()}, false);
  h = ops::add(h, attn_out(attn));

  Tensor conv = ops::glu(pointwise_in(conv_norm(h)));
  conv = ops::depthwise_conv1d(conv, depthwise_weight, depthwise_bias);
  conv = pointwise_out(ops::silu(conv_inner_norm(conv)));
  h = ops::add(h, conv);

  h = ops::add(h, ops::scale(ff2(h), 0.5));
  return final_norm(h);
}

void ConformerBlock::collect(const std::string& prefix, ParamList& out) const {
  ff1.collect(prefix + ".ff1", out);
  attn_norm.collect(prefix + ".attn_norm", out);
  qkv.collect(prefix + ".attn.qkv", out);
  attn_out.collect(prefix + ".attn.out", out);
  conv_norm.collect(prefix + ".conv.norm", out);
  pointwise_in.collect(prefix + ".conv.pointwise_in", out);
  out.push_back({prefix + ".conv.depthwise.weight", depthwise_weight});
  out.push_back({prefix + ".conv.depthwise.bias", depthwise_bias});
  conv_inner_norm.collect(prefix + ".conv.inner_norm", out);
  pointwise_out.collect(prefix + ".conv.pointwise_out", out);
  ff2.collect(prefix + ".ff2", out);
  final_norm.collect(prefix + ".final_norm", out);
}

void ConformerBlock::zero_branch_outputs() {
  zero(ff1.out);
  zero(attn_out);
  zero(pointwise_out);
  zero(ff2.out);
}

AudioEncoder::AudioEncoder(ConformerConfig config) : config_(config) {
  config_.validate();
  SplitMix64 rng(config_.seed);
  subsampler_ = ConvSubsampler::init(config_, rng);
  for (std::size_t i = 0; i < config_.n_blocks; ++i) blocks_.push_back(ConformerBlock::init(config_, rng));
}

Tensor AudioEncoder::operator()(const Tensor& features) const {
  if (features.rank() != 2 || features.dim(1) != config_.n_mels)
    throw DimensionError("audio features must be [T, " + std::to_string(config_.n_mels) + "], got " +
                         shape_str(features.shape()));
  return encode_blocks(subsampler_(features));
}

Tensor AudioEncoder::encode_blocks(const Tensor& x) const {
  Tensor h = x;
  for (const auto& b : blocks_) h = b(h, config_);
  return h;
}

ParamList AudioEncoder::parameters() const {
  ParamList out;
  subsampler_.collect("subsample", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("blocks." + std::to_string(i), out);
  return out;
}

MlpProjector make_audio_projector(const ConformerConfig& encoder, std::size_t d_model, SplitMix64& rng) {
  return MlpProjector::init(encoder.attn_dim, d_model, d_model, rng);
}

AudioBudget audio_token_budget(double duration_s, std::size_t context_tokens, std::size_t reserved_text) {
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) throw DomainError("audio duration must be > 0");
  // Round to whole microseconds first so 0.08 s is exactly 8 frames.
  const auto micros = static_cast<std::uint64_t>(std::llround(duration_s * 1e6));
  const std::uint64_t per_frame = static_cast<std::uint64_t>(1e6 / kFramesPerSecond);
  AudioBudget b;
  b.frames = static_cast<std::size_t>((micros + per_frame - 1) / per_frame);
  if (b.frames == 0) b.frames = 1;
  b.tokens = subsample_length(b.frames);
  b.fits = b.tokens + reserved_text <= context_tokens;
  return b;
}

double max_audio_seconds(std::size_t context_tokens, std::size_t reserved_text) {
  if (context_tokens <= reserved_text) return 0.0;
  // ceil(frames / 8) <= n  <=>  frames <= 8n
  const std::size_t frames = 8 * (context_tokens - reserved_text);
  return static_cast<double>(frames) / kFramesPerSecond;
}

std::vector<double> token_timestamps_ms(std::size_t tokens) {
  std::vector<double> out(tokens);
  for (std::size_t i = 0; i < tokens; ++i) out[i] = static_cast<double>(i * kTokenMs);
  return out;
}

}  // namespace mmlora
