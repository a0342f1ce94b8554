// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/training/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mmlora/audio/wav.hpp"
#include "mmlora/errors.hpp"
#include "mmlora/numerics/rng.hpp"
#include "mmlora/vision/image.hpp"

namespace mmlora {

void PayloadStore::put_audio(const std::string& ref, Tensor features) {
  if (features.rank() != 2) throw DimensionError("audio features must be [T, n_mels]");
  audio_[ref] = std::move(features);
}

void PayloadStore::put_image(const std::string& ref, Tensor image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw DimensionError("images must be [H, W, 3]");
  images_[ref] = std::move(image);
}

const Tensor& PayloadStore::audio(const std::string& ref) const {
  if (auto it = audio_.find(ref); it != audio_.end()) return it->second;
  const auto path = base_dir_ / ref;
  if (!std::filesystem::is_regular_file(path)) throw DataError("audio payload not found: " + ref);
  const Waveform wave = read_wav(path);
  if (wave.sample_rate != mel_.sample_rate)
    throw DataError(ref + ": expected " + std::to_string(mel_.sample_rate) + " Hz audio, got " +
                    std::to_string(wave.sample_rate));
  return audio_[ref] = log_mel(wave.samples, mel_).frames;
}

const Tensor& PayloadStore::image(const std::string& ref) const {
  if (auto it = images_.find(ref); it != images_.end()) return it->second;
  const auto path = base_dir_ / ref;
  if (!std::filesystem::is_regular_file(path)) throw DataError("image payload not found: " + ref);
  return images_[ref] = image_to_tensor(load_image(path));
}

Dataset load_dataset(const std::filesystem::path& jsonl) {
  return {read_sft_jsonl(jsonl), PayloadStore(jsonl.parent_path())};
}

std::vector<double> synth_tone(double frequency_hz, double seconds, double amplitude, double phase,
                               std::size_t sample_rate) {
  const auto n = static_cast<std::size_t>(std::llround(seconds * static_cast<double>(sample_rate)));
  const std::size_t fade = std::min<std::size_t>(n / 2, sample_rate / 100);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(sample_rate);
    double env = 1.0;
    if (i < fade) env = static_cast<double>(i) / static_cast<double>(fade);
    if (n - 1 - i < fade) env = static_cast<double>(n - 1 - i) / static_cast<double>(fade);
    x[i] = amplitude * env * std::sin(2.0 * std::numbers::pi * frequency_hz * t + phase);
  }
  return x;
}

Dataset synthetic_tone_dataset(const ToneSpec& spec) {
  if (spec.n_classes == 0 || spec.n_classes > number_words().size())
    throw ConfigError("tone classes must be in 1.." + std::to_string(number_words().size()));
  Dataset d;
  SplitMix64 rng(spec.seed);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const std::size_t k = i % spec.n_classes;
    const auto wave = synth_tone(spec.base_hz + spec.step_hz * static_cast<double>(k), spec.seconds,
                                 rng.uniform(0.3, 0.9), rng.uniform(0.0, 2.0 * std::numbers::pi));
    const std::string ref = "tone/" + std::to_string(i);
    d.payloads.put_audio(ref, log_mel(wave).frames);
    SftSample s;
    s.task = "asr";
    s.prompt = kAsrPrompt;
    s.audio = ref;
    s.label = number_words()[k];
    s.lang = "en";
    d.samples.push_back(std::move(s));
  }
  return d;
}

Dataset synthetic_image_dataset(const ImageSpec& spec) {
  if (spec.n_classes == 0 || spec.n_classes > number_words().size())
    throw ConfigError("image classes must be in 1.." + std::to_string(number_words().size()));
  Dataset d;
  SplitMix64 rng(spec.seed);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const std::size_t k = i % spec.n_classes;
    // Class colours walk the RGB cube corners and midpoints.
    const double base[3] = {static_cast<double>(k & 1), static_cast<double>((k >> 1) & 1),
                            static_cast<double>(k >> 2) / 2.0};
    std::vector<double> px(spec.height * spec.width * 3);
    for (std::size_t p = 0; p < px.size(); ++p) px[p] = std::clamp(base[p % 3] + rng.normal(0.0, 0.03), 0.0, 1.0);
    const std::string ref = "image/" + std::to_string(i);
    d.payloads.put_image(ref, Tensor({spec.height, spec.width, 3}, std::move(px)));
    SftSample s;
    s.task = "caption";
    s.prompt = "What is in this picture";
    s.images = {ref};
    s.label = number_words()[k];
    s.lang = "en";
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace mmlora
