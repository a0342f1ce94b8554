// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmlora/decoder/config.hpp"
#include "mmlora/numerics/nn.hpp"

namespace mmlora {

/// Extra term added to a named linear layer's output. The LoRA mixture
/// implements this; the decoder itself only knows layer paths.
class LinearDelta {
 public:
  virtual ~LinearDelta() = default;
  /// Returns nothing when no adapter touches `path`.
  virtual std::optional<Tensor> delta(std::string_view path, const Tensor& x) const = 0;
};

/// Projector output replacing the placeholder rows [start, start + rows).
struct InjectedSpan {
  std::size_t start = 0;
  Tensor embeddings;  // [n, d_model]
};

/// Per-layer key/value history, rows are positions. Append-only.
class KVCache {
 public:
  KVCache(const DecoderConfig& config);

  std::size_t length() const { return length_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t n_layers() const { return keys_.size(); }
  /// Number of stored doubles across all layers, keys and values.
  std::size_t element_count() const;
  const Tensor& keys(std::size_t layer) const { return keys_.at(layer); }
  const Tensor& values(std::size_t layer) const { return values_.at(layer); }

 private:
  friend class Decoder;
  void append(std::size_t layer, const Tensor& k, const Tensor& v);

  std::size_t kv_width_;
  std::size_t capacity_;
  std::size_t length_ = 0;
  std::vector<Tensor> keys_;
  std::vector<Tensor> values_;
};

/// A linear layer reachable by a stable path such as "layers.0.attn.qkv".
struct LinearSite {
  std::string path;
  const Linear* layer;
};

struct DecoderLayer {
  LayerNorm attn_norm;
  Linear qkv;  // fused query/key/value projection
  Linear out;
  LayerNorm mlp_norm;
  Linear mlp_in;
  Linear mlp_out;
};

/// Tied-embedding decoder-only transformer with grouped-query attention and
/// fractional rotary embeddings. Pre-norm blocks, GELU MLP.
class Decoder {
 public:
  explicit Decoder(DecoderConfig config);

  const DecoderConfig& config() const { return config_; }

  /// logits [T, vocab] for token ids; spans overwrite placeholder rows. With
  /// a cache, `tokens` is the new suffix and the cache grows by T.
  Tensor forward(std::span<const std::int64_t> tokens, std::span<const InjectedSpan> spans = {},
                 const LinearDelta* delta = nullptr, KVCache* cache = nullptr) const;

  /// Logits [1, vocab] for one new token appended to `cache`.
  Tensor decode_step(std::int64_t token, KVCache& cache, const LinearDelta* delta = nullptr) const;

  /// Greedy (top-1) continuation of a prompt. Stops after `stop` (included)
  /// or max_new tokens.
  std::vector<std::int64_t> generate_greedy(std::span<const std::int64_t> prompt, std::span<const InjectedSpan> spans,
                                            std::size_t max_new, const LinearDelta* delta = nullptr,
                                            std::optional<std::int64_t> stop = std::nullopt) const;

  const Tensor& embedding() const { return embedding_; }
  /// The output projection. Tied: this is the embedding matrix itself.
  const Tensor& unembedding() const { return embedding_; }
  const std::vector<DecoderLayer>& layers() const { return layers_; }
  std::vector<DecoderLayer>& mutable_layers() { return layers_; }
  const LayerNorm& final_norm() const { return final_norm_; }

  std::vector<LinearSite> linear_sites() const;
  const Linear* find_linear(std::string_view path) const;
  Linear* find_linear_mut(std::string_view path);

  ParamList parameters() const;
  std::uint64_t fingerprint() const;

  /// Deep copy with independent storage.
  Decoder clone() const;

  /// Writes config.json (exact checkpoint keys) and weights.p4tz(+.json).
  void save(const std::filesystem::path& dir) const;
  static Decoder load(const std::filesystem::path& dir);

 private:
  Tensor project(const Linear& layer, std::string_view path, const Tensor& x, const LinearDelta* delta) const;
  Tensor attention(std::size_t index, const Tensor& x, const LinearDelta* delta, KVCache* cache,
                   std::size_t start) const;

  DecoderConfig config_;
  Tensor embedding_;
  std::vector<DecoderLayer> layers_;
  LayerNorm final_norm_;
  std::vector<std::string> paths_;  // layer path prefixes, "layers.<i>"
};

std::int64_t argmax_row(const Tensor& logits, std::size_t row);

struct SiteShape {
  std::string path;
  std::size_t in;
  std::size_t out;
};

/// Linear layer paths and extents implied by a config, without allocating
/// weights (used for full-scale parameter accounting).
std::vector<SiteShape> site_shapes(const DecoderConfig& config);

}  // namespace mmlora
