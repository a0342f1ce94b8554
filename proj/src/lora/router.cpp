// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/lora/router.hpp"

#include "mmlora/errors.hpp"
#include "mmlora/lora/adapter.hpp"

namespace mmlora {

std::string ModalitySet::describe() const {
  std::string s = "{";
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (s.size() > 1) s += ",";
    s += name;
  };
  add(text, "text");
  add(image, "image");
  add(audio, "audio");
  return s + "}";
}

std::vector<std::string> ModalityRouter::route(const ModalitySet& m) const {
  if (m.empty()) throw ConfigError("cannot route an empty modality set");
  if (m.image) return {kLoraVision};
  if (m.audio) return {kLoraAudio};
  return {};
}

std::string format_adapter_list(const std::vector<std::string>& names) {
  std::string s = "[";
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) s += ", ";
    s += names[i];
  }
  return s + "]";
}

}  // namespace mmlora
