// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/vision/crops.hpp"

#include <cstdint>
#include <tuple>

#include "mmlora/errors.hpp"

namespace mmlora {
namespace {

// Compares |r1/c1 - h/w| with |r2/c2 - h/w| exactly in integers:
// |r*w - c*h| / (c*w), so cross-multiply by the other denominator.
int compare_ratio_error(std::uint64_t r1, std::uint64_t c1, std::uint64_t r2, std::uint64_t c2, std::uint64_t h,
                        std::uint64_t w) {
  auto diff = [&](std::uint64_t r, std::uint64_t c) { return r * w > c * h ? r * w - c * h : c * h - r * w; };
  const std::uint64_t lhs = diff(r1, c1) * c2;
  const std::uint64_t rhs = diff(r2, c2) * c1;
  return lhs < rhs ? -1 : (lhs > rhs ? 1 : 0);
}

}  // namespace

std::pair<std::size_t, std::size_t> fallback_aspect_grid(std::size_t h, std::size_t w, std::size_t max_crops) {
  if (h == 0 || w == 0 || max_crops == 0) throw DomainError("fallback grid needs positive sizes and budget");
  if (h > (1u << 24) || w > (1u << 24) || max_crops > (1u << 12)) throw DomainError("image or crop budget too large");
  std::size_t best_r = 1, best_c = 1;
  for (std::size_t r = 1; r <= max_crops; ++r) {
    for (std::size_t c = 1; r * c <= max_crops; ++c) {
      const int cmp = compare_ratio_error(r, c, best_r, best_c, h, w);
      const bool better = cmp < 0 || (cmp == 0 && (r * c > best_r * best_c || (r * c == best_r * best_c && r > best_r)));
      if (better) {
        best_r = r;
        best_c = c;
      }
    }
  }
  return {best_r, best_c};
}

CropPlan plan_crops(std::size_t h, std::size_t w, std::size_t crop, std::size_t max_crops) {
  if (h == 0 || w == 0 || crop == 0 || max_crops == 0) throw DomainError("plan_crops needs H, W, C, max_crops >= 1");
  CropPlan p;
  p.rows = (h + crop - 1) / crop;
  p.cols = (w + crop - 1) / crop;
  if (p.rows * p.cols > max_crops) {
    std::tie(p.rows, p.cols) = fallback_aspect_grid(h, w, max_crops);
    p.fallback_used = true;
  }
  p.resize_h = p.rows * crop;
  p.resize_w = p.cols * crop;
  return p;
}

}  // namespace mmlora
