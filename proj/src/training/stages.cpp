// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/training/stages.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mmlora/decoder/special_tokens.hpp"
#include "mmlora/errors.hpp"

namespace mmlora {
namespace {

StageSpec make_stage(std::string name, std::vector<std::string> trainable, double lr, double step_scale,
                     std::string source, std::optional<std::size_t> max_audio = std::nullopt) {
  StageSpec s;
  s.name = std::move(name);
  for (const auto& g : parameter_groups()) {
    if (std::find(trainable.begin(), trainable.end(), g) == trainable.end()) s.frozen_groups.push_back(g);
  }
  s.trainable_groups = std::move(trainable);
  s.learning_rate = lr;
  s.steps = static_cast<std::size_t>(std::llround(static_cast<double>(kNominalStageSteps) * step_scale));
  s.data_source = std::move(source);
  s.max_audio_tokens = max_audio;
  return s;
}

std::vector<Tensor> group_tensors(const MultimodalModel& model, const std::vector<std::string>& groups) {
  std::vector<Tensor> out;
  for (const auto& g : groups) {
    for (const auto& p : model.group(g)) out.push_back(p.tensor);
  }
  return out;
}

}  // namespace

void StageSpec::validate() const {
  std::set<std::string> seen;
  for (const auto* list : {&trainable_groups, &frozen_groups}) {
    for (const auto& g : *list) {
      const auto& all = parameter_groups();
      if (std::find(all.begin(), all.end(), g) == all.end())
        throw ConfigError("stage " + name + ": unknown parameter group '" + g + "'");
      if (!seen.insert(g).second) throw ConfigError("stage " + name + ": group '" + g + "' listed twice");
    }
  }
  if (seen.size() != parameter_groups().size())
    throw ConfigError("stage " + name + ": every parameter group must be either trainable or frozen");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("stage " + name + ": learning rate must be finite and non-negative");
}

nlohmann::json StageSpec::to_json() const {
  nlohmann::json j = {{"name", name},
                      {"trainable_groups", trainable_groups},
                      {"frozen_groups", frozen_groups},
                      {"learning_rate", learning_rate},
                      {"steps", steps},
                      {"data_source", data_source}};
  j["max_audio_tokens"] = max_audio_tokens ? nlohmann::json(*max_audio_tokens) : nlohmann::json(nullptr);
  return j;
}

std::vector<StageSpec> standard_schedules(double step_scale) {
  if (!(step_scale >= 0.0) || !std::isfinite(step_scale)) throw ConfigError("step scale must be finite and non-negative");
  const double vision_lr = 1e-4;
  return {
      make_stage("vision_projector_alignment", {kGroupVisionProjector}, vision_lr, step_scale, "caption"),
      make_stage("vision_joint", {kGroupVisionEncoder, kGroupVisionProjector}, vision_lr, step_scale, "vision_pretrain"),
      make_stage("vision_generative", {kLoraVision, kGroupVisionEncoder, kGroupVisionProjector}, vision_lr, step_scale,
                 "vision_sft"),
      make_stage("vision_multiframe", {kLoraVision, kGroupVisionProjector}, vision_lr, step_scale, "multiframe_sft"),
      make_stage("speech_pretrain", {kGroupAudioEncoder, kGroupAudioProjector}, 4e-5, step_scale, "asr"),
      make_stage("speech_posttrain", {kGroupAudioProjector, kLoraAudio}, 1e-4, step_scale, "speech_sft", 375),
      make_stage("vision_speech_joint", {kLoraVision, kGroupVisionEncoder, kGroupVisionProjector}, vision_lr,
                 step_scale, "vision_speech_sft"),
  };
}

std::vector<StageSpec> apply_schedule_override(std::vector<StageSpec> stages, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("schedule override must be a JSON object");
  try {
    for (const auto& [key, _] : j.items()) {
      if (key != "step_scale" && key != "stages") throw ConfigError("unknown schedule override key '" + key + "'");
    }
    if (j.contains("step_scale")) {
      const double scale = j.at("step_scale").get<double>();
      if (!(scale >= 0.0) || !std::isfinite(scale)) throw ConfigError("step_scale must be finite and non-negative");
      for (auto& s : stages)
        s.steps = static_cast<std::size_t>(std::llround(static_cast<double>(kNominalStageSteps) * scale));
    }
    if (j.contains("stages")) {
      for (const auto& [name, fields] : j.at("stages").items()) {
        auto it = std::find_if(stages.begin(), stages.end(), [&](const StageSpec& s) { return s.name == name; });
        if (it == stages.end()) throw ConfigError("schedule override names unknown stage '" + name + "'");
        for (const auto& [key, value] : fields.items()) {
          if (key == "learning_rate") it->learning_rate = value.get<double>();
          else if (key == "steps") it->steps = value.get<std::size_t>();
          else if (key == "data_source") it->data_source = value.get<std::string>();
          else if (key == "max_audio_tokens")
            it->max_audio_tokens = value.is_null() ? std::nullopt : std::optional(value.get<std::size_t>());
          else throw ConfigError("unknown stage override key '" + key + "' for " + name);
        }
        it->validate();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad schedule override: ") + e.what());
  }
  return stages;
}

const StageSpec& find_stage(const std::vector<StageSpec>& stages, const std::string& name) {
  for (const auto& s : stages) {
    if (s.name == name) return s;
  }
  throw ConfigError("unknown stage '" + name + "'");
}

FreezeMask capture_freeze_mask(const MultimodalModel& model, const StageSpec& stage) {
  FreezeMask m;
  const auto all = model.fingerprints();
  for (const auto& g : stage.frozen_groups) m.fingerprints[g] = all.at(g);
  return m;
}

FrozenCheck verify_frozen(const FreezeMask& before, const MultimodalModel& model) {
  FrozenCheck c;
  const auto now = model.fingerprints();
  for (const auto& [group, fp] : before.fingerprints) {
    if (now.at(group) != fp) {
      c.passed = false;
      c.changed_groups.push_back(group);
    }
  }
  return c;
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const std::vector<double> g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
    p.zero_grad();
  }
}

nlohmann::json StageReport::to_json() const {
  nlohmann::json fp = nlohmann::json::array();
  for (const auto& [group, value] : before) {
    fp.push_back({{"group", group},
                  {"before", fingerprint_hex(value)},
                  {"after", fingerprint_hex(after.at(group))},
                  {"changed", value != after.at(group)}});
  }
  return {{"stage", stage}, {"steps", steps}, {"losses", losses}, {"fingerprints", fp},
          {"frozen_grad_sq", frozen_grad_sq}};
}

PreparedSample prepare_sample(const SftSample& sample, const MultimodalModel& model, const Tokenizer& tokenizer,
                              const PayloadStore& payloads, std::optional<std::size_t> max_audio_tokens,
                              std::size_t max_crops) {
  const std::size_t stride = 8;
  auto audio_features = [&](const std::string& ref) {
    const Tensor& f = payloads.audio(ref);
    if (max_audio_tokens && subsample_length(f.dim(0)) > *max_audio_tokens)
      return ops::slice_rows(f, 0, *max_audio_tokens * stride);
    return f;
  };
  PreparedSample out;
  out.modalities = sample.modalities();
  out.rendered = render_sft(sample, tokenizer, [&](Modality m, const std::string& ref) -> std::optional<std::size_t> {
    try {
      if (m == Modality::kAudio) return subsample_length(audio_features(ref).dim(0));
      const Tensor& img = payloads.image(ref);
      return model.image_tokens(img.dim(0), img.dim(1), max_crops);
    } catch (const DataError&) {
      return std::nullopt;
    }
  });
  for (const auto& span : out.rendered.spans) {
    Tensor emb = span.modality == Modality::kAudio ? model.encode_audio(audio_features(span.ref))
                                                   : model.encode_image(payloads.image(span.ref), max_crops);
    out.spans.push_back({span.start, emb});
  }
  return out;
}

ops::MaskedLoss sample_loss(const PreparedSample& prepared, const MultimodalModel& model) {
  const auto ex = shift_for_training(prepared.rendered);
  const ActiveAdapters active = model.route(prepared.modalities);
  const Tensor logits = model.decoder.forward(ex.inputs, prepared.spans, active.empty() ? nullptr : &active);
  return ops::cross_entropy_masked(logits, ex.targets, ex.mask);
}

StageReport run_stage(const StageSpec& stage, MultimodalModel& model, const Dataset& data, const Tokenizer& tokenizer,
                      const RunOptions& options) {
  stage.validate();
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  if (stage.steps > 0 && data.samples.empty()) throw DataError("stage " + stage.name + " has no training samples");

  StageReport report;
  report.stage = stage.name;
  report.before = model.fingerprints();
  const FreezeMask mask = capture_freeze_mask(model, stage);

  for (const auto& g : stage.frozen_groups) set_requires_grad(model.group(g), false);
  for (const auto& g : stage.trainable_groups) set_requires_grad(model.group(g), true);
  const std::vector<Tensor> frozen = group_tensors(model, stage.frozen_groups);
  Adam opt(group_tensors(model, stage.trainable_groups), stage.learning_rate);

  SplitMix64 rng(options.seed);
  std::vector<std::size_t> order(data.samples.size());
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
      cursor = 0;
    }
    return order[cursor++];
  };

  for (std::size_t step = 0; step < stage.steps; ++step) {
    double total = 0.0;
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      const auto prepared = prepare_sample(data.samples[next_index()], model, tokenizer, data.payloads,
                                           stage.max_audio_tokens, model.config().vision.max_crops_sft);
      const ops::MaskedLoss l = sample_loss(prepared, model);
      total += l.loss.item();
      if (!l.all_masked) ops::scale(l.loss, 1.0 / static_cast<double>(options.batch_size)).backward();
    }
    for (const auto& t : frozen) {
      if (!t.has_grad()) continue;
      for (double g : t.grad()) report.frozen_grad_sq += g * g;
    }
    opt.step();
    report.losses.push_back(total / static_cast<double>(options.batch_size));
    if (options.on_step) options.on_step(step + 1, report.losses.back());
  }
  report.steps = opt.steps_taken();

  set_requires_grad(model.group(kGroupDecoder), false);
  for (const auto& g : stage.trainable_groups) set_requires_grad(model.group(g), false);
  report.after = model.fingerprints();
  const FrozenCheck check = verify_frozen(mask, model);
  if (!check.passed) {
    std::string names;
    for (const auto& g : check.changed_groups) names += (names.empty() ? "" : ", ") + g;
    throw FrozenMutationError("stage " + stage.name + " modified frozen group(s): " + names);
  }
  return report;
}

GreedyAccuracy greedy_accuracy(const MultimodalModel& model, const Dataset& data, const Tokenizer& tokenizer,
                               std::optional<std::size_t> max_audio_tokens) {
  GreedyAccuracy acc;
  for (const auto& sample : data.samples) {
    const auto prepared = prepare_sample(sample, model, tokenizer, data.payloads, max_audio_tokens,
                                         model.config().vision.max_crops_sft);
    const auto prompt = generation_prompt(prepared.rendered);
    std::vector<std::int64_t> target = tokenizer.encode(sample.label);
    target.push_back(tokens::kEnd);
    const ActiveAdapters active = model.route(prepared.modalities);
    const auto generated = model.decoder.generate_greedy(prompt, prepared.spans, target.size(),
                                                         active.empty() ? nullptr : &active, tokens::kEnd);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      if (i < generated.size() && generated[i] == target[i]) ++hits;
    }
    acc.correct += hits;
    acc.total += target.size();
    if (hits == target.size()) ++acc.exact_samples;
  }
  return acc;
}

}  // namespace mmlora
