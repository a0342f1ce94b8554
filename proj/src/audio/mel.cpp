// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/audio/mel.hpp"

#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

#include "mmlora/errors.hpp"

namespace mmlora {
namespace {

// FFTW planning touches global state; execution on distinct buffers does not.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_.get(); }
  const fftw_complex* run() {
    fftw_execute(plan_);
    return out_.get();
  }
  std::size_t bins() const { return n_ / 2 + 1; }

 private:
  std::size_t n_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  fftw_plan plan_;
};

}  // namespace

void MelFrontendConfig::validate() const {
  if (n_mels < 1) throw ConfigError("n_mels must be >= 1");
  if (hop < 1 || hop > window) throw ConfigError("hop must lie in [1, window]");
  if (n_fft < window) throw ConfigError("n_fft must be >= window");
  if (sample_rate < 1) throw ConfigError("sample_rate must be >= 1");
}

std::size_t frame_count(std::size_t n_samples, const MelFrontendConfig& config) {
  if (n_samples < config.window)
    throw InputTooShortError("need at least " + std::to_string(config.window) + " samples, got " +
                             std::to_string(n_samples));
  return 1 + (n_samples - config.window) / config.hop;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<std::vector<double>> mel_filterbank(const MelFrontendConfig& config) {
  config.validate();
  const std::size_t bins = config.n_fft / 2 + 1;
  const double nyquist = static_cast<double>(config.sample_rate) / 2.0;
  const double top = hz_to_mel(nyquist);
  std::vector<double> edges(config.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(config.n_mels + 1));

  std::vector<std::vector<double>> bank(config.n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < config.n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * static_cast<double>(config.sample_rate) / config.n_fft;
      if (f > lo && f < hi) bank[m][k] = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return bank;
}

AudioFeatures log_mel(std::span<const double> samples, const MelFrontendConfig& config) {
  config.validate();
  if (samples.empty()) throw InputTooShortError("empty waveform");
  const std::size_t t_frames = frame_count(samples.size(), config);
  const auto bank = mel_filterbank(config);

  std::vector<double> hann(config.window);
  for (std::size_t i = 0; i < config.window; ++i)
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / config.window);

  RealFft fft(config.n_fft);
  std::vector<double> out(t_frames * config.n_mels);
  std::vector<double> mag(fft.bins());
  for (std::size_t t = 0; t < t_frames; ++t) {
    double* buf = fft.input();
    for (std::size_t i = 0; i < config.n_fft; ++i)
      buf[i] = i < config.window ? samples[t * config.hop + i] * hann[i] : 0.0;
    const fftw_complex* spec = fft.run();
    for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::hypot(spec[k][0], spec[k][1]);
    for (std::size_t m = 0; m < config.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < mag.size(); ++k) e += bank[m][k] * mag[k];
      out[t * config.n_mels + m] = e > 0.0 ? std::max(std::log(e), config.log_floor) : config.log_floor;
    }
  }
  AudioFeatures f;
  f.frames = Tensor({t_frames, config.n_mels}, std::move(out));
  f.duration_ms = 1000.0 * static_cast<double>(samples.size()) / static_cast<double>(config.sample_rate);
  return f;
}

}  // namespace mmlora
