// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/training/model.hpp"

#include <fstream>

#include "mmlora/errors.hpp"
#include "mmlora/vision/crops.hpp"
#include "mmlora/vision/image.hpp"

namespace mmlora {
namespace {

MlpProjector audio_projector_for(const MultimodalConfig& c) {
  SplitMix64 rng(c.seed ^ 0xA0D10ULL);
  return make_audio_projector(c.audio, c.decoder.d_model, rng);
}

MlpProjector vision_projector_for(const MultimodalConfig& c) {
  SplitMix64 rng(c.seed ^ 0x715105ULL);
  return make_vision_projector(c.vision, c.decoder.d_model, rng);
}

template <typename T>
T field(const nlohmann::json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

}  // namespace

const std::vector<std::string>& parameter_groups() {
  static const std::vector<std::string> g = {kGroupDecoder,        kGroupAudioEncoder,    kGroupAudioProjector,
                                             kGroupVisionEncoder,  kGroupVisionProjector, kLoraAudio,
                                             kLoraVision};
  return g;
}

void MultimodalConfig::validate() const {
  decoder.validate();
  audio.validate();
  vision.validate();
  if (audio_lora_rank == 0 || vision_lora_rank == 0) throw ConfigError("adapter ranks must be positive");
}

nlohmann::json MultimodalConfig::to_json() const {
  return {{"decoder", decoder.to_json()},
          {"audio",
           {{"n_mels", audio.n_mels},
            {"n_blocks", audio.n_blocks},
            {"attn_dim", audio.attn_dim},
            {"ff_dim", audio.ff_dim},
            {"n_heads", audio.n_heads},
            {"conv_kernel", audio.conv_kernel},
            {"seed", audio.seed}}},
          {"vision",
           {{"crop_size", vision.crop_size},
            {"patch", vision.patch},
            {"width", vision.width},
            {"n_heads", vision.n_heads},
            {"max_crops_pretrain", vision.max_crops_pretrain},
            {"max_crops_sft", vision.max_crops_sft},
            {"seed", vision.seed}}},
          {"audio_lora_rank", audio_lora_rank},
          {"vision_lora_rank", vision_lora_rank},
          {"seed", seed}};
}

MultimodalConfig MultimodalConfig::from_json(const nlohmann::json& j) {
  MultimodalConfig c;
  try {
    if (j.contains("decoder")) c.decoder = DecoderConfig::from_json(j.at("decoder"));
    if (j.contains("audio")) {
      const auto& a = j.at("audio");
      c.audio.n_mels = field(a, "n_mels", c.audio.n_mels);
      c.audio.n_blocks = field(a, "n_blocks", c.audio.n_blocks);
      c.audio.attn_dim = field(a, "attn_dim", c.audio.attn_dim);
      c.audio.ff_dim = field(a, "ff_dim", c.audio.ff_dim);
      c.audio.n_heads = field(a, "n_heads", c.audio.n_heads);
      c.audio.conv_kernel = field(a, "conv_kernel", c.audio.conv_kernel);
      c.audio.seed = field(a, "seed", c.audio.seed);
    }
    if (j.contains("vision")) {
      const auto& v = j.at("vision");
      c.vision.crop_size = field(v, "crop_size", c.vision.crop_size);
      c.vision.patch = field(v, "patch", c.vision.patch);
      c.vision.width = field(v, "width", c.vision.width);
      c.vision.n_heads = field(v, "n_heads", c.vision.n_heads);
      c.vision.max_crops_pretrain = field(v, "max_crops_pretrain", c.vision.max_crops_pretrain);
      c.vision.max_crops_sft = field(v, "max_crops_sft", c.vision.max_crops_sft);
      c.vision.seed = field(v, "seed", c.vision.seed);
    }
    c.audio_lora_rank = field(j, "audio_lora_rank", c.audio_lora_rank);
    c.vision_lora_rank = field(j, "vision_lora_rank", c.vision_lora_rank);
    c.seed = field(j, "seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

MultimodalModel::MultimodalModel(MultimodalConfig config)
    : decoder((config.validate(), config.decoder)),
      audio_encoder(config.audio),
      audio_projector(audio_projector_for(config)),
      vision_encoder(config.vision),
      vision_projector(vision_projector_for(config)),
      config_(std::move(config)) {
  adapters.attach(LoraAdapter::create(kLoraAudio, config_.audio_lora_rank, decoder, audio_attach_points(decoder),
                                      config_.seed * 2 + 11),
                  decoder);
  adapters.attach(LoraAdapter::create(kLoraVision, config_.vision_lora_rank, decoder, vision_attach_points(decoder),
                                      config_.seed * 2 + 12),
                  decoder);
}

ParamList MultimodalModel::group(const std::string& name) const {
  if (name == kGroupDecoder) return decoder.parameters();
  if (name == kGroupAudioEncoder) return audio_encoder.parameters();
  if (name == kGroupVisionEncoder) return vision_encoder.parameters();
  ParamList out;
  if (name == kGroupAudioProjector) {
    audio_projector.collect("audio_projector", out);
    return out;
  }
  if (name == kGroupVisionProjector) {
    vision_projector.collect("vision_projector", out);
    return out;
  }
  if (name == kLoraAudio || name == kLoraVision) return adapters.get(name).trainable_parameters();
  throw ConfigError("unknown parameter group '" + name + "'");
}

FingerprintTable MultimodalModel::fingerprints() const {
  FingerprintTable t;
  for (const auto& g : parameter_groups()) {
    const auto tensors = tensors_of(group(g));
    t[g] = fingerprint(tensors);
  }
  return t;
}

Tensor MultimodalModel::encode_audio(const Tensor& features) const { return audio_projector(audio_encoder(features)); }

Tensor MultimodalModel::encode_image(const Tensor& image, std::size_t max_crops) const {
  if (image.rank() != 3 || image.dim(2) != 3) throw DimensionError("image must be [H, W, 3], got " + shape_str(image.shape()));
  const auto plan = plan_crops(image.dim(0), image.dim(1), config_.vision.crop_size, max_crops);
  std::vector<Tensor> parts;
  for (const auto& crop : make_crops(image, plan, config_.vision.crop_size)) parts.push_back(vision_encoder(crop));
  return vision_projector(ops::concat_rows(parts));
}

std::size_t MultimodalModel::image_tokens(std::size_t height, std::size_t width, std::size_t max_crops) const {
  return plan_crops(height, width, config_.vision.crop_size, max_crops).crops() * config_.vision.n_patches();
}

ActiveAdapters MultimodalModel::route(const ModalitySet& modalities) const {
  return adapters.activate(ModalityRouter{}.route(modalities));
}

void MultimodalModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "model.json") << config_.to_json().dump(2) << '\n';
  ParamList all;
  for (const auto& g : parameter_groups()) {
    for (auto& p : group(g)) all.push_back({g + "/" + p.name, p.tensor});
  }
  save_tensors(dir / "weights.p4tz", all);
}

MultimodalModel MultimodalModel::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw DataError("no model.json in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed model.json: " + std::string(e.what()));
  }
  MultimodalModel m(MultimodalConfig::from_json(j));
  const auto stored = load_tensors(dir / "weights.p4tz");
  for (const auto& g : parameter_groups()) {
    ParamList dest;
    for (auto& p : m.group(g)) dest.push_back({g + "/" + p.name, p.tensor});
    assign_params(dest, stored);
  }
  return m;
}

}  // namespace mmlora
