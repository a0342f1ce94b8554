// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmlora/training/data.hpp"
#include "mmlora/training/model.hpp"

namespace mmlora {

struct StageSpec {
  std::string name;
  std::vector<std::string> trainable_groups;
  std::vector<std::string> frozen_groups;
  double learning_rate = 0.0;
  std::size_t steps = 0;
  std::string data_source;
  std::optional<std::size_t> max_audio_tokens;

  /// Throws ConfigError unless trainable and frozen partition the model's
  /// parameter groups.
  void validate() const;
  nlohmann::json to_json() const;
};

inline constexpr std::size_t kNominalStageSteps = 50000;
inline constexpr double kDeskStepScale = 2000.0 / 50000.0;

/// The seven-stage program: four vision stages, speech pre- and
/// post-training, then vision-speech joint training. Every stage is nominally
/// 50k steps, multiplied by `step_scale`.
std::vector<StageSpec> standard_schedules(double step_scale = kDeskStepScale);

/// {"step_scale": x, "stages": {"<name>": {"learning_rate", "steps",
/// "max_audio_tokens", "data_source"}}}. Unknown names or keys are a
/// ConfigError.
std::vector<StageSpec> apply_schedule_override(std::vector<StageSpec> stages, const nlohmann::json& override_json);

const StageSpec& find_stage(const std::vector<StageSpec>& stages, const std::string& name);

struct FreezeMask {
  FingerprintTable fingerprints;  // frozen groups only
};

FreezeMask capture_freeze_mask(const MultimodalModel& model, const StageSpec& stage);

struct FrozenCheck {
  bool passed = true;
  std::vector<std::string> changed_groups;
};

FrozenCheck verify_frozen(const FreezeMask& before, const MultimodalModel& model);

/// Adam without weight decay.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.95, double eps = 1e-8);
  /// Applies the accumulated gradients, then clears them.
  void step();
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct RunOptions {
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  /// Called after every optimizer step with (step, loss).
  std::function<void(std::size_t, double)> on_step;
};

struct StageReport {
  std::string stage;
  std::size_t steps = 0;
  std::vector<double> losses;  // one mean loss per step
  FingerprintTable before;
  FingerprintTable after;
  /// Sum of squared gradient entries seen on frozen tensors (always 0).
  double frozen_grad_sq = 0.0;

  nlohmann::json to_json() const;
};

/// Renders a sample against the model's encoders, returning the rendered
/// stream and the projector outputs for each placeholder span.
struct PreparedSample {
  RenderedSft rendered;
  std::vector<InjectedSpan> spans;
  ModalitySet modalities;
};
PreparedSample prepare_sample(const SftSample& sample, const MultimodalModel& model, const Tokenizer& tokenizer,
                              const PayloadStore& payloads, std::optional<std::size_t> max_audio_tokens = std::nullopt,
                              std::size_t max_crops = 16);

/// Masked next-token loss for one sample, routed through the modality's
/// adapters.
ops::MaskedLoss sample_loss(const PreparedSample& prepared, const MultimodalModel& model);

/// Trains the stage's groups and proves the rest untouched. Throws
/// FrozenMutationError naming the groups if any frozen fingerprint moved.
StageReport run_stage(const StageSpec& stage, MultimodalModel& model, const Dataset& data, const Tokenizer& tokenizer,
                      const RunOptions& options = {});

struct GreedyAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t exact_samples = 0;
  double token_accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Greedy-decodes every sample and compares position by position with the
/// label tokens and the closing <|end|>.
GreedyAccuracy greedy_accuracy(const MultimodalModel& model, const Dataset& data, const Tokenizer& tokenizer,
                               std::optional<std::size_t> max_audio_tokens = std::nullopt);

}  // namespace mmlora
