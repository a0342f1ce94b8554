// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmlora/numerics/tensor.hpp"

namespace mmlora {

struct MelFrontendConfig {
  std::size_t sample_rate = 16000;
  std::size_t n_mels = 80;
  std::size_t hop = 160;     // 10 ms
  std::size_t window = 400;  // 25 ms
  std::size_t n_fft = 512;
  double log_floor = -11.5;

  void validate() const;
};

struct AudioFeatures {
  Tensor frames;  // [T, n_mels]
  double duration_ms = 0.0;
};

/// 1 + floor((n - window) / hop). Throws InputTooShortError when n < window.
std::size_t frame_count(std::size_t n_samples, const MelFrontendConfig& config = {});

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular HTK filters over 0..sample_rate/2, [n_mels, n_fft/2 + 1].
std::vector<std::vector<double>> mel_filterbank(const MelFrontendConfig& config);

/// Hann window, magnitude spectrum, mel filters, natural log clamped at the
/// floor. Deterministic and thread-safe.
AudioFeatures log_mel(std::span<const double> samples, const MelFrontendConfig& config = {});

}  // namespace mmlora
