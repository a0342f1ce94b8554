// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmlora/decoder/decoder.hpp"

namespace mmlora {

inline constexpr const char* kLoraVision = "LoRA_V";
inline constexpr const char* kLoraAudio = "LoRA_A";

/// Low-rank pair for one attach point: delta(x) = (alpha/r) * (x A^T) B^T.
struct LoraPair {
  Tensor a;  // [r, in]
  Tensor b;  // [out, r]
};

class LoraAdapter {
 public:
  /// A ~ N(0, 1/in) per pair, B = 0, so a fresh adapter is an exact identity.
  /// alpha defaults to the rank. Throws ConfigError for rank 0 or an attach
  /// point the model does not have.
  static LoraAdapter create(std::string name, std::size_t rank, const Decoder& model,
                            std::vector<std::string> attach_points, std::uint64_t seed,
                            std::optional<double> alpha = std::nullopt);

  const std::string& name() const { return name_; }
  std::size_t rank() const { return rank_; }
  double alpha() const { return alpha_; }
  double scaling() const { return alpha_ / static_cast<double>(rank_); }
  const std::vector<std::string>& attach_points() const { return attach_points_; }

  const LoraPair* pair(std::string_view path) const;
  LoraPair* pair_mut(std::string_view path);

  /// Adapter contribution at `path`, or nothing if not attached there.
  std::optional<Tensor> delta(std::string_view path, const Tensor& x) const;

  /// Only the A/B tensors, named "<point>.lora_a" / "<point>.lora_b".
  ParamList trainable_parameters() const;
  std::size_t parameter_count() const;

  /// Manifest {name, rank, alpha, attach_points[]} plus the tensor container.
  void save(const std::filesystem::path& dir) const;
  static LoraAdapter load(const std::filesystem::path& dir, const Decoder& model);

 private:
  std::string name_;
  std::size_t rank_ = 0;
  double alpha_ = 0.0;
  std::vector<std::string> attach_points_;
  std::map<std::string, LoraPair, std::less<>> pairs_;
};

/// Every decoder linear (used by the vision adapter).
std::vector<std::string> vision_attach_points(const Decoder& model);
/// Attention and MLP linears (used by the speech adapter). In this decoder
/// every linear is one of those, so the two sets coincide.
std::vector<std::string> audio_attach_points(const Decoder& model);

/// Sum of r * (in + out) over the attach points of a config, computed from
/// extents only.
std::size_t lora_parameter_count(const DecoderConfig& config, std::size_t rank);

/// Sums the deltas of several adapters. Activation is per request; nothing
/// in the base model is mutated.
class ActiveAdapters : public LinearDelta {
 public:
  ActiveAdapters() = default;
  explicit ActiveAdapters(std::vector<const LoraAdapter*> adapters) : adapters_(std::move(adapters)) {}

  bool empty() const { return adapters_.empty(); }
  std::optional<Tensor> delta(std::string_view path, const Tensor& x) const override;

 private:
  std::vector<const LoraAdapter*> adapters_;
};

/// Named adapters attached to one frozen decoder.
class AdapterBank {
 public:
  /// Throws ConfigError if an attach point is unknown to `model` or the
  /// name is taken.
  void attach(LoraAdapter adapter, const Decoder& model);
  bool contains(const std::string& name) const { return adapters_.contains(name); }
  const LoraAdapter& get(const std::string& name) const;
  LoraAdapter& get_mut(const std::string& name);
  std::vector<std::string> names() const;

  /// Adapters for the given names, in order; unknown names are skipped so a
  /// router may name adapters that were never trained.
  ActiveAdapters activate(const std::vector<std::string>& names) const;

 private:
  std::map<std::string, LoraAdapter> adapters_;
};

/// Copy of `model` with W' = W + (alpha/r) B A at every attach point.
Decoder merge(const LoraAdapter& adapter, const Decoder& model);
/// Inverse of merge: W' = W - (alpha/r) B A.
Decoder unmerge(const LoraAdapter& adapter, const Decoder& model);

}  // namespace mmlora
