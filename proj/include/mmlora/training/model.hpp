// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmlora/audio/conformer.hpp"
#include "mmlora/decoder/decoder.hpp"
#include "mmlora/lora/adapter.hpp"
#include "mmlora/lora/router.hpp"
#include "mmlora/vision/encoder.hpp"

namespace mmlora {

inline constexpr const char* kGroupDecoder = "decoder";
inline constexpr const char* kGroupAudioEncoder = "audio_encoder";
inline constexpr const char* kGroupAudioProjector = "audio_projector";
inline constexpr const char* kGroupVisionEncoder = "vision_encoder";
inline constexpr const char* kGroupVisionProjector = "vision_projector";

/// Every parameter group, in a fixed order. The two adapter groups are
/// named after their adapters.
const std::vector<std::string>& parameter_groups();

struct MultimodalConfig {
  DecoderConfig decoder = DecoderConfig::toy();
  ConformerConfig audio = ConformerConfig::toy();
  VisionEncoderConfig vision = VisionEncoderConfig::toy();
  std::size_t audio_lora_rank = 8;
  std::size_t vision_lora_rank = 8;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static MultimodalConfig from_json(const nlohmann::json& j);
};

using FingerprintTable = std::map<std::string, std::uint64_t>;

/// Frozen decoder plus both modality towers and the two adapters.
class MultimodalModel {
 public:
  explicit MultimodalModel(MultimodalConfig config);

  const MultimodalConfig& config() const { return config_; }

  Decoder decoder;
  AudioEncoder audio_encoder;
  MlpProjector audio_projector;
  PatchEncoder vision_encoder;
  MlpProjector vision_projector;
  AdapterBank adapters;

  /// Throws ConfigError for an unknown group name.
  ParamList group(const std::string& name) const;
  FingerprintTable fingerprints() const;

  /// [T, n_mels] features -> [ceil(T/8), d_model].
  Tensor encode_audio(const Tensor& features) const;
  /// [H, W, 3] image -> [crops * patches, d_model].
  Tensor encode_image(const Tensor& image, std::size_t max_crops) const;
  std::size_t image_tokens(std::size_t height, std::size_t width, std::size_t max_crops) const;

  ActiveAdapters route(const ModalitySet& modalities) const;

  void save(const std::filesystem::path& dir) const;
  static MultimodalModel load(const std::filesystem::path& dir);

 private:
  MultimodalConfig config_;
};

}  // namespace mmlora
