// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmlora/numerics/tensor.hpp"

namespace mmlora {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Container layout, one record per tensor, back to back:
//   "P4TZ" | u32 rank | u64 extents[rank] | f64 values (little-endian)
// The sidecar <path>.json lists {"name", "shape", "offset"} per record in order.
void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& container);

/// FNV-1a over the raw bytes of shape and values, in order.
std::uint64_t fingerprint(std::span<const Tensor> tensors);
std::uint64_t fingerprint(const Tensor& tensor);
std::string fingerprint_hex(std::uint64_t fp);

}  // namespace mmlora
