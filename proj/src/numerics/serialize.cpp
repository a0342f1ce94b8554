// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/numerics/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmlora/errors.hpp"

namespace mmlora {

namespace {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

constexpr char kMagic[4] = {'P', '4', 'T', 'Z'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw DataError("truncated tensor container: " + path.string());
  }
  return v;
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv(std::uint64_t& h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& container) {
  return std::filesystem::path(container.string() + ".json");
}

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    os.write(kMagic, 4);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    offset += 4 + 4 + 8 * t.rank() + 8 * t.numel();
  }
  if (!os) throw DataError("write failed: " + path.string());
  std::ofstream side(sidecar_path(path));
  side << nlohmann::json{{"format", "P4TZ"}, {"tensors", index}}.dump(2) << '\n';
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream side(sidecar_path(path));
  if (!side) throw DataError("missing tensor sidecar: " + sidecar_path(path).string());
  nlohmann::json index;
  try {
    side >> index;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad tensor sidecar " + sidecar_path(path).string() + ": " + e.what());
  }

  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open tensor container: " + path.string());
  std::vector<NamedTensor> out;
  for (const auto& entry : index.at("tensors")) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
      throw DataError("bad magic in tensor container: " + path.string());
    }
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(is, path));
    if (shape != entry.at("shape").get<Shape>()) {
      throw DataError("sidecar shape disagrees with container for " + entry.at("name").get<std::string>());
    }
    std::vector<double> values(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)))) {
      throw DataError("truncated tensor container: " + path.string());
    }
    out.push_back({entry.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

std::uint64_t fingerprint(std::span<const Tensor> tensors) {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : tensors) {
    for (std::uint64_t e : t.shape()) fnv(h, &e, sizeof(e));
    fnv(h, t.data().data(), t.numel() * sizeof(double));
  }
  return h;
}

std::uint64_t fingerprint(const Tensor& tensor) { return fingerprint(std::span<const Tensor>(&tensor, 1)); }

std::string fingerprint_hex(std::uint64_t fp) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fp;
  return os.str();
}

}  // namespace mmlora
