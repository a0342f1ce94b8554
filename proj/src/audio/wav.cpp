// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/audio/wav.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "mmlora/errors.hpp"

namespace mmlora {
namespace {

template <typename T>
T read_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> b{};
  in.read(reinterpret_cast<char*>(b.data()), sizeof(T));
  if (!in) throw DataError("truncated WAV header");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<T>(v);
}

template <typename T>
void write_le(std::ostream& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
}

std::string read_tag(std::istream& in) {
  char tag[4];
  in.read(tag, 4);
  if (!in) throw DataError("truncated WAV header");
  return std::string(tag, 4);
}

// Leaves the stream positioned at the first sample.
WavHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  if (read_tag(in) != "RIFF") throw DataError("not a RIFF file: " + path.string());
  read_le<std::uint32_t>(in);
  if (read_tag(in) != "WAVE") throw DataError("not a WAVE file: " + path.string());
  WavHeader h;
  bool have_fmt = false;
  for (;;) {
    const std::string tag = read_tag(in);
    const std::uint32_t size = read_le<std::uint32_t>(in);
    if (tag == "fmt ") {
      const auto format = read_le<std::uint16_t>(in);
      h.channels = read_le<std::uint16_t>(in);
      h.sample_rate = read_le<std::uint32_t>(in);
      read_le<std::uint32_t>(in);
      read_le<std::uint16_t>(in);
      h.bits_per_sample = read_le<std::uint16_t>(in);
      if (format != 1) throw DataError("WAV is not PCM: " + path.string());
      in.seekg(size - 16 + (size & 1u), std::ios::cur);
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) throw DataError("WAV data chunk precedes fmt: " + path.string());
      h.data_bytes = size;
      if (h.channels == 0 || h.bits_per_sample == 0 || h.sample_rate == 0)
        throw DataError("WAV fmt chunk is degenerate: " + path.string());
      return h;
    } else {
      in.seekg(size + (size & 1u), std::ios::cur);
    }
  }
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

void put_header(std::ostream& out, std::uint32_t sample_rate, std::uint32_t data_bytes) {
  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint16_t>(out, 1);
  write_le<std::uint32_t>(out, sample_rate);
  write_le<std::uint32_t>(out, sample_rate * 2);
  write_le<std::uint16_t>(out, 2);
  write_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  write_le<std::uint32_t>(out, data_bytes);
}

}  // namespace

WavHeader probe_wav(const std::filesystem::path& path) {
  auto in = open(path);
  return parse_header(in, path);
}

Waveform read_wav(const std::filesystem::path& path) {
  auto in = open(path);
  const WavHeader h = parse_header(in, path);
  if (h.channels != 1 || h.bits_per_sample != 16)
    throw DataError("expected PCM16 mono WAV, got " + std::to_string(h.channels) + " channel(s) at " +
                    std::to_string(h.bits_per_sample) + " bits: " + path.string());
  Waveform w;
  w.sample_rate = h.sample_rate;
  w.samples.resize(h.frame_count());
  for (auto& s : w.samples) s = read_le<std::int16_t>(in) / 32768.0;
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  put_header(out, wave.sample_rate, static_cast<std::uint32_t>(wave.samples.size() * 2));
  for (double s : wave.samples) {
    const double scaled = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    write_le<std::int16_t>(out, static_cast<std::int16_t>(scaled));
  }
}

void write_wav_header_only(const std::filesystem::path& path, std::uint32_t sample_rate, std::uint64_t frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::uint64_t bytes = frames * 2;
  if (bytes > 0xFFFFFFFFull - 36) throw DomainError("WAV data chunk limited to 4 GiB");
  put_header(out, sample_rate, static_cast<std::uint32_t>(bytes));
}

}  // namespace mmlora
