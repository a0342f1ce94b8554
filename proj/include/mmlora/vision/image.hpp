// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mmlora/numerics/tensor.hpp"
#include "mmlora/vision/crops.hpp"

namespace mmlora {

/// 8-bit RGB, row-major, interleaved channels.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t ch) const { return rgb[(y * width + x) * 3 + ch]; }
};

/// Binary PPM (P6) or PNG, chosen by file signature. Throws DataError.
Image load_image(const std::filesystem::path& path);
void save_ppm(const std::filesystem::path& path, const Image& image);
void save_png(const std::filesystem::path& path, const Image& image);

/// Values in [0, 1], shape [H, W, 3].
Tensor image_to_tensor(const Image& image);

/// Bilinear resize with half-pixel centers, [H, W, 3] -> [h, w, 3].
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

/// Resizes to the plan and cuts rows*cols crops of [C, C, 3], row-major.
std::vector<Tensor> make_crops(const Tensor& image, const CropPlan& plan, std::size_t crop);

}  // namespace mmlora
