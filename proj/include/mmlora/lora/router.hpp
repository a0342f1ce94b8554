// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace mmlora {

/// Which input modalities a request carries.
struct ModalitySet {
  bool text = true;
  bool image = false;
  bool audio = false;

  bool empty() const { return !text && !image && !audio; }
  std::string describe() const;
  bool operator==(const ModalitySet&) const = default;
};

/// Maps the modalities present in a request to the adapters that run.
///
///   {text}              -> []
///   {text, audio}       -> [LoRA_A]
///   {text, image}       -> [LoRA_V]
///   {text, image, audio}-> [LoRA_V]   (vision-speech is served by LoRA_V)
///
/// Sets without text are treated as if text were present: every request
/// carries at least a chat template.
class ModalityRouter {
 public:
  /// Throws ConfigError for an empty modality set.
  std::vector<std::string> route(const ModalitySet& modalities) const;
};

std::string format_adapter_list(const std::vector<std::string>& names);

}  // namespace mmlora
