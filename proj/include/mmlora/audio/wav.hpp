// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace mmlora {

struct Waveform {
  std::uint32_t sample_rate = 16000;
  std::vector<double> samples;  // mono, in [-1, 1)

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct WavHeader {
  std::uint32_t sample_rate = 0;
  std::uint16_t channels = 0;
  std::uint16_t bits_per_sample = 0;
  std::uint64_t data_bytes = 0;

  std::uint64_t frame_count() const { return data_bytes / (channels * (bits_per_sample / 8u)); }
  double duration_s() const { return static_cast<double>(frame_count()) / sample_rate; }
};

/// Parses the RIFF header up to the data chunk without reading samples, so
/// budget checks on long recordings stay cheap.
WavHeader probe_wav(const std::filesystem::path& path);

/// PCM16 mono only. Throws DataError for anything else.
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wave);

/// Writes only a header that claims `frames` PCM16 mono samples.
void write_wav_header_only(const std::filesystem::path& path, std::uint32_t sample_rate, std::uint64_t frames);

}  // namespace mmlora
