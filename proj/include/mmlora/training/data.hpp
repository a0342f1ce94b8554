// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mmlora/audio/mel.hpp"
#include "mmlora/training/sft.hpp"

namespace mmlora {

/// Modality payloads by reference. References registered in memory take
/// precedence; anything else is read from disk (WAV for audio, PNG/PPM for
/// images) relative to `base_dir` and cached.
class PayloadStore {
 public:
  explicit PayloadStore(std::filesystem::path base_dir = {}) : base_dir_(std::move(base_dir)) {}

  void put_audio(const std::string& ref, Tensor features);
  void put_image(const std::string& ref, Tensor image);

  /// Log-mel features [T, n_mels]. Throws DataError if unreadable.
  const Tensor& audio(const std::string& ref) const;
  /// [H, W, 3] in [0, 1]. Throws DataError if unreadable.
  const Tensor& image(const std::string& ref) const;

 private:
  std::filesystem::path base_dir_;
  MelFrontendConfig mel_;
  mutable std::map<std::string, Tensor, std::less<>> audio_;
  mutable std::map<std::string, Tensor, std::less<>> images_;
};

struct Dataset {
  std::vector<SftSample> samples;
  PayloadStore payloads;
};

/// JSONL samples; payload paths resolve relative to the file's directory.
Dataset load_dataset(const std::filesystem::path& jsonl);

/// Pure sine of `frequency_hz` with a short fade in and out.
std::vector<double> synth_tone(double frequency_hz, double seconds, double amplitude, double phase,
                               std::size_t sample_rate = 16000);

struct ToneSpec {
  std::size_t n_samples = 50;
  std::size_t n_classes = 10;
  double seconds = 0.4;
  double base_hz = 300.0;
  double step_hz = 350.0;
  std::uint64_t seed = 0;
};

/// Tone i of class k = i mod n_classes at base + k * step Hz, labelled with
/// the English word for k and prompted as an ASR request.
Dataset synthetic_tone_dataset(const ToneSpec& spec = {});

struct ImageSpec {
  std::size_t n_samples = 20;
  std::size_t n_classes = 10;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 0;
};

/// Flat-colour images with light noise, one colour per class, labelled with
/// the English word for the class.
Dataset synthetic_image_dataset(const ImageSpec& spec = {});

inline constexpr const char* kAsrPrompt = "Transcribe the audio clip into text.";

}  // namespace mmlora
