// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/training/sft.hpp"

#include <algorithm>
#include <fstream>

#include "mmlora/decoder/special_tokens.hpp"
#include "mmlora/errors.hpp"

namespace mmlora {
namespace {

std::string text_of(std::int64_t special) { return std::string(tokens::kSpecialText[static_cast<std::size_t>(special)]); }

std::string require_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) throw DataError(std::string("sample field '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

}  // namespace

SftSample sft_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("sample must be a JSON object");
  SftSample s;
  s.task = require_string(j, "task");
  s.prompt = j.contains("prompt") ? require_string(j, "prompt") : "";
  s.label = require_string(j, "label");
  s.lang = j.contains("lang") ? require_string(j, "lang") : "";
  if (j.contains("audio") && !j.at("audio").is_null()) s.audio = require_string(j, "audio");
  if (j.contains("images") && !j.at("images").is_null()) {
    if (!j.at("images").is_array()) throw DataError("sample field 'images' must be an array");
    for (const auto& img : j.at("images")) {
      if (!img.is_string()) throw DataError("image references must be strings");
      s.images.push_back(img.get<std::string>());
    }
  }
  if (s.label.empty()) throw DataError("sample label must be nonempty");
  return s;
}

nlohmann::json sft_to_json(const SftSample& s) {
  nlohmann::json j = {{"task", s.task}, {"prompt", s.prompt}, {"label", s.label}, {"lang", s.lang}};
  if (s.audio) j["audio"] = *s.audio;
  if (!s.images.empty()) j["images"] = s.images;
  return j;
}

std::vector<SftSample> read_sft_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<SftSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sft_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_sft_jsonl(const std::filesystem::path& path, const std::vector<SftSample>& samples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& s : samples) out << sft_to_json(s).dump() << '\n';
}

RenderedSft render_sft(const SftSample& sample, const Tokenizer& tokenizer, const PlaceholderResolver& resolve) {
  if (sample.label.empty()) throw DataError("sample label must be nonempty");
  RenderedSft r;
  auto push = [&](std::int64_t id, std::uint8_t m) {
    r.ids.push_back(id);
    r.loss_mask.push_back(m);
  };
  auto placeholder = [&](Modality mod, const std::string& ref) {
    const auto n = resolve ? resolve(mod, ref) : std::nullopt;
    if (!n || *n == 0) throw DataError("unresolved placeholder payload '" + ref + "'");
    r.spans.push_back({mod, ref, r.ids.size(), *n});
    const std::int64_t id = mod == Modality::kImage ? tokens::kImage : tokens::kAudio;
    for (std::size_t i = 0; i < *n; ++i) push(id, 0);
  };

  push(tokens::kUser, 0);
  for (const auto& img : sample.images) placeholder(Modality::kImage, img);
  if (sample.audio) placeholder(Modality::kAudio, *sample.audio);
  for (auto id : tokenizer.encode(sample.prompt)) push(id, 0);
  push(tokens::kEnd, 0);
  push(tokens::kAssistant, 0);
  for (auto id : tokenizer.encode(sample.label)) push(id, 1);
  push(tokens::kEnd, 1);
  return r;
}

std::string render_sft_text(const SftSample& sample) {
  std::string s = text_of(tokens::kUser);
  for (std::size_t i = 0; i < sample.images.size(); ++i) s += text_of(tokens::kImage);
  if (sample.audio) s += text_of(tokens::kAudio);
  s += sample.prompt;
  s += text_of(tokens::kEnd);
  s += text_of(tokens::kAssistant);
  s += sample.label;
  s += text_of(tokens::kEnd);
  return s;
}

std::string collapse_placeholders(const RenderedSft& rendered, const Tokenizer& tokenizer) {
  std::string out;
  std::size_t i = 0;
  for (const auto& span : rendered.spans) {
    out += tokenizer.decode(std::span(rendered.ids).subspan(i, span.start - i));
    out += tokenizer.piece(rendered.ids[span.start]);
    i = span.start + span.length;
  }
  out += tokenizer.decode(std::span(rendered.ids).subspan(i));
  return out;
}

TrainingExample shift_for_training(const RenderedSft& rendered) {
  TrainingExample ex;
  const std::size_t n = rendered.ids.size();
  ex.inputs.assign(rendered.ids.begin(), rendered.ids.begin() + static_cast<std::ptrdiff_t>(n - 1));
  ex.targets.assign(rendered.ids.begin() + 1, rendered.ids.end());
  ex.mask.assign(rendered.loss_mask.begin() + 1, rendered.loss_mask.end());
  return ex;
}

std::vector<std::int64_t> generation_prompt(const RenderedSft& rendered) {
  auto it = std::find(rendered.ids.begin(), rendered.ids.end(), tokens::kAssistant);
  if (it == rendered.ids.end()) throw DataError("rendered sample has no assistant turn");
  return {rendered.ids.begin(), it + 1};
}

}  // namespace mmlora
