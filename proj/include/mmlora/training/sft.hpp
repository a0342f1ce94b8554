// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmlora/lora/router.hpp"
#include "mmlora/training/tokenizer.hpp"

namespace mmlora {

enum class Modality { kImage, kAudio };

/// One conversation turn: optional task prompt, modality payload references,
/// and the label the assistant should produce.
struct SftSample {
  std::string task;
  std::string prompt;  // may be empty
  std::optional<std::string> audio;
  std::vector<std::string> images;
  std::string label;
  std::string lang;

  ModalitySet modalities() const { return {true, !images.empty(), audio.has_value()}; }
};

/// Reads one JSONL line. Throws DataError on a missing or mistyped field.
SftSample sft_from_json(const nlohmann::json& j);
nlohmann::json sft_to_json(const SftSample& s);
std::vector<SftSample> read_sft_jsonl(const std::filesystem::path& path);
void write_sft_jsonl(const std::filesystem::path& path, const std::vector<SftSample>& samples);

struct PlaceholderSpan {
  Modality modality;
  std::string ref;
  std::size_t start = 0;
  std::size_t length = 0;
};

struct RenderedSft {
  std::vector<std::int64_t> ids;
  std::vector<PlaceholderSpan> spans;
  std::vector<std::uint8_t> loss_mask;  // per position of ids
};

/// Number of encoder tokens a payload expands to, or nothing if the
/// reference cannot be resolved.
using PlaceholderResolver = std::function<std::optional<std::size_t>(Modality, const std::string& ref)>;

/// <|user|> [image placeholders] [audio placeholders] prompt <|end|>
/// <|assistant|> label <|end|>, with the loss mask set on the label tokens
/// and the closing <|end|> only.
RenderedSft render_sft(const SftSample& sample, const Tokenizer& tokenizer, const PlaceholderResolver& resolve);

/// The same layout as text, one placeholder spelling per payload.
std::string render_sft_text(const SftSample& sample);

/// Decodes rendered ids, collapsing each placeholder run to one spelling.
std::string collapse_placeholders(const RenderedSft& rendered, const Tokenizer& tokenizer);

/// Next-token training view: inputs ids[0..T-1), targets ids[1..T), mask
/// taken from the target positions.
struct TrainingExample {
  std::vector<std::int64_t> inputs;
  std::vector<std::int64_t> targets;
  std::vector<std::uint8_t> mask;
};
TrainingExample shift_for_training(const RenderedSft& rendered);

/// Prompt half of a rendered sample, ending right after <|assistant|>.
std::vector<std::int64_t> generation_prompt(const RenderedSft& rendered);

}  // namespace mmlora
