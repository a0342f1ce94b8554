// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/decoder/decoder.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mmlora/decoder/attention.hpp"
#include "mmlora/decoder/special_tokens.hpp"
#include "mmlora/errors.hpp"

namespace mmlora {

namespace {
constexpr double kEmbeddingStd = 0.5;
}

KVCache::KVCache(const DecoderConfig& config)
    : kv_width_(config.n_kv_heads * config.head_dim()),
      capacity_(config.max_context),
      keys_(config.n_layers),
      values_(config.n_layers) {}

std::size_t KVCache::element_count() const {
  return 2 * keys_.size() * length_ * kv_width_;
}

void KVCache::append(std::size_t layer, const Tensor& k, const Tensor& v) {
  Tensor kd = k.detach();
  Tensor vd = v.detach();
  if (keys_[layer].defined()) {
    keys_[layer] = ops::concat_rows({keys_[layer], kd});
    values_[layer] = ops::concat_rows({values_[layer], vd});
  } else {
    keys_[layer] = kd;
    values_[layer] = vd;
  }
  // The last layer appended closes the step.
  if (layer + 1 == keys_.size()) length_ = keys_[layer].dim(0);
}

Decoder::Decoder(DecoderConfig config) : config_(config) {
  config_.validate();
  SplitMix64 rng(config_.seed);
  const std::size_t d = config_.d_model;
  embedding_ = normal_tensor({config_.vocab_size, d}, kEmbeddingStd, rng);
  const double out_std = 1.0 / std::sqrt(static_cast<double>(d) * 2.0 * static_cast<double>(config_.n_layers));
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    DecoderLayer l;
    l.attn_norm = LayerNorm::init(d);
    l.qkv = Linear::init(d, config_.qkv_width(), rng);
    l.out = Linear::init(config_.n_q_heads * config_.head_dim(), d, rng, true, out_std);
    l.mlp_norm = LayerNorm::init(d);
    l.mlp_in = Linear::init(d, config_.mlp_hidden, rng);
    l.mlp_out = Linear::init(config_.mlp_hidden, d, rng, true,
                             out_std * std::sqrt(static_cast<double>(d) / static_cast<double>(config_.mlp_hidden)));
    layers_.push_back(std::move(l));
    paths_.push_back("layers." + std::to_string(i));
  }
  final_norm_ = LayerNorm::init(d);
}

Tensor Decoder::project(const Linear& layer, std::string_view path, const Tensor& x, const LinearDelta* delta) const {
  Tensor y = layer(x);
  if (delta) {
    if (auto extra = delta->delta(path, x)) y = ops::add(y, *extra);
  }
  return y;
}

Tensor Decoder::attention(std::size_t index, const Tensor& x, const LinearDelta* delta, KVCache* cache,
                          std::size_t start) const {
  const auto& l = layers_[index];
  const std::string& prefix = paths_[index];
  const std::size_t hd = config_.head_dim();
  const std::size_t q_width = config_.n_q_heads * hd;
  const std::size_t kv_width = config_.n_kv_heads * hd;

  Tensor qkv = project(l.qkv, prefix + ".attn.qkv", x, delta);
  const auto positions = position_range(start, x.dim(0));
  Tensor q = apply_fractional_rope(ops::slice_cols(qkv, 0, q_width), config_.n_q_heads, hd, config_.rotary_fraction,
                                   positions);
  Tensor k = apply_fractional_rope(ops::slice_cols(qkv, q_width, q_width + kv_width), config_.n_kv_heads, hd,
                                   config_.rotary_fraction, positions);
  Tensor v = ops::slice_cols(qkv, q_width + kv_width, q_width + 2 * kv_width);

  if (cache) {
    Tensor past_k = cache->keys(index);
    Tensor past_v = cache->values(index);
    cache->append(index, k, v);
    if (past_k.defined()) {
      k = ops::concat_rows({past_k, k});
      v = ops::concat_rows({past_v, v});
    }
  }
  Tensor heads = grouped_attention(q, k, v, {config_.n_q_heads, config_.n_kv_heads, hd}, true);
  return project(l.out, prefix + ".attn.out", heads, delta);
}

Tensor Decoder::forward(std::span<const std::int64_t> tokens, std::span<const InjectedSpan> spans,
                        const LinearDelta* delta, KVCache* cache) const {
  if (tokens.empty()) throw DimensionError("forward: empty token sequence");
  const std::size_t start = cache ? cache->length() : 0;
  if (start + tokens.size() > config_.max_context) {
    throw CapacityError("context of " + std::to_string(config_.max_context) + " tokens exceeded (" +
                        std::to_string(start) + " cached + " + std::to_string(tokens.size()) + " new)");
  }

  Tensor h = ops::embedding(embedding_, tokens);
  for (const auto& span : spans) {
    const Tensor& e = span.embeddings;
    if (!e.defined() || e.rank() != 2 || e.dim(1) != config_.d_model) {
      throw AlignmentError("injected span must be [n, " + std::to_string(config_.d_model) + "]");
    }
    if (span.start + e.dim(0) > tokens.size()) throw AlignmentError("injected span runs past the token sequence");
    for (std::size_t i = span.start; i < span.start + e.dim(0); ++i) {
      if (!tokens::is_placeholder(tokens[i])) {
        throw AlignmentError("injected span covers non-placeholder token at position " + std::to_string(i));
      }
    }
    h = ops::splice_rows(h, span.start, e);
  }

  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    h = ops::add(h, attention(i, l.attn_norm(h), delta, cache, start));
    Tensor m = ops::gelu(project(l.mlp_in, paths_[i] + ".mlp.in", l.mlp_norm(h), delta));
    h = ops::add(h, project(l.mlp_out, paths_[i] + ".mlp.out", m, delta));
  }
  return ops::matmul_nt(final_norm_(h), embedding_);
}

Tensor Decoder::decode_step(std::int64_t token, KVCache& cache, const LinearDelta* delta) const {
  const std::int64_t one[1] = {token};
  return forward(one, {}, delta, &cache);
}

std::int64_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t v = logits.dim(1);
  auto r = logits.data().subspan(row * v, v);
  std::size_t best = 0;
  for (std::size_t j = 1; j < v; ++j)
    if (r[j] > r[best]) best = j;
  return static_cast<std::int64_t>(best);
}

std::vector<std::int64_t> Decoder::generate_greedy(std::span<const std::int64_t> prompt,
                                                   std::span<const InjectedSpan> spans, std::size_t max_new,
                                                   const LinearDelta* delta, std::optional<std::int64_t> stop) const {
  std::vector<std::int64_t> out;
  if (max_new == 0) return out;
  KVCache cache(config_);
  Tensor logits = forward(prompt, spans, delta, &cache);
  std::int64_t next = argmax_row(logits, logits.dim(0) - 1);
  out.push_back(next);
  while (out.size() < max_new && !(stop && next == *stop)) {
    if (cache.length() >= config_.max_context) break;
    logits = decode_step(next, cache, delta);
    next = argmax_row(logits, 0);
    out.push_back(next);
  }
  return out;
}

std::vector<LinearSite> Decoder::linear_sites() const {
  std::vector<LinearSite> sites;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    sites.push_back({paths_[i] + ".attn.qkv", &l.qkv});
    sites.push_back({paths_[i] + ".attn.out", &l.out});
    sites.push_back({paths_[i] + ".mlp.in", &l.mlp_in});
    sites.push_back({paths_[i] + ".mlp.out", &l.mlp_out});
  }
  return sites;
}

const Linear* Decoder::find_linear(std::string_view path) const {
  for (const auto& s : linear_sites())
    if (s.path == path) return s.layer;
  return nullptr;
}

std::vector<SiteShape> site_shapes(const DecoderConfig& c) {
  std::vector<SiteShape> out;
  const std::size_t attn = c.n_q_heads * c.head_dim();
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i);
    out.push_back({p + ".attn.qkv", c.d_model, c.qkv_width()});
    out.push_back({p + ".attn.out", attn, c.d_model});
    out.push_back({p + ".mlp.in", c.d_model, c.mlp_hidden});
    out.push_back({p + ".mlp.out", c.mlp_hidden, c.d_model});
  }
  return out;
}

Linear* Decoder::find_linear_mut(std::string_view path) { return const_cast<Linear*>(find_linear(path)); }

ParamList Decoder::parameters() const {
  ParamList out;
  out.push_back({"embedding", embedding_});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const auto& p = paths_[i];
    l.attn_norm.collect(p + ".attn_norm", out);
    l.qkv.collect(p + ".attn.qkv", out);
    l.out.collect(p + ".attn.out", out);
    l.mlp_norm.collect(p + ".mlp_norm", out);
    l.mlp_in.collect(p + ".mlp.in", out);
    l.mlp_out.collect(p + ".mlp.out", out);
  }
  final_norm_.collect("final_norm", out);
  return out;
}

std::uint64_t Decoder::fingerprint() const {
  const auto ts = tensors_of(parameters());
  return mmlora::fingerprint(ts);
}

Decoder Decoder::clone() const {
  Decoder d(*this);
  d.embedding_ = embedding_.clone(embedding_.requires_grad());
  for (auto& l : d.layers_) {
    l.attn_norm = l.attn_norm.clone();
    l.qkv = l.qkv.clone();
    l.out = l.out.clone();
    l.mlp_norm = l.mlp_norm.clone();
    l.mlp_in = l.mlp_in.clone();
    l.mlp_out = l.mlp_out.clone();
  }
  d.final_norm_ = final_norm_.clone();
  return d;
}

void Decoder::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "config.json") << config_.to_json().dump(2) << '\n';
  const auto params = parameters();
  save_tensors(dir / "weights.p4tz", params);
}

Decoder Decoder::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "config.json");
  if (!is) throw DataError("missing decoder config: " + (dir / "config.json").string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad decoder config: ") + e.what());
  }
  Decoder d(DecoderConfig::from_json(j));
  assign_params(d.parameters(), load_tensors(dir / "weights.p4tz"));
  return d;
}

}  // namespace mmlora
