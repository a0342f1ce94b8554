// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <utility>

namespace mmlora {

struct CropPlan {
  std::size_t rows = 1;
  std::size_t cols = 1;
  std::size_t resize_h = 0;
  std::size_t resize_w = 0;
  bool fallback_used = false;

  std::size_t crops() const { return rows * cols; }
  bool operator==(const CropPlan&) const = default;
};

/// ceil(H/C) x ceil(W/C) crops when that fits max_crops, else the best
/// aspect-ratio grid. The image is resized to exactly rows*C x cols*C.
CropPlan plan_crops(std::size_t h, std::size_t w, std::size_t crop, std::size_t max_crops);

/// Over 1 <= r*c <= max_crops, minimizes |r/c - H/W|; ties prefer the larger
/// r*c, then the larger r.
std::pair<std::size_t, std::size_t> fallback_aspect_grid(std::size_t h, std::size_t w, std::size_t max_crops);

}  // namespace mmlora
