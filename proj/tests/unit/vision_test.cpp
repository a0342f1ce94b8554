// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "../support/crop_oracle.hpp"
#include "../support/grad_check.hpp"
#include "mmlora/errors.hpp"
#include "mmlora/vision/crops.hpp"
#include "mmlora/vision/encoder.hpp"
#include "mmlora/vision/image.hpp"

using namespace mmlora;
using mmlora::testing::grad_check;
using mmlora::testing::projected;
using mmlora::testing::random_tensor;

namespace {

Image gradient_image(std::size_t h, std::size_t w) {
  Image img{h, w, std::vector<std::uint8_t>(h * w * 3)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.rgb[(y * w + x) * 3 + c] = static_cast<std::uint8_t>((y * 7 + x * 3 + c * 50) % 256);
  return img;
}

}  // namespace

TEST(PlanCrops, ThinStripIsSingleCrop) {
  auto p = plan_crops(28, 448, 448, 16);
  EXPECT_EQ(p, (CropPlan{1, 1, 448, 448, false}));
}

TEST(PlanCrops, ExactMultiple) {
  EXPECT_EQ(plan_crops(896, 896, 448, 16), (CropPlan{2, 2, 896, 896, false}));
}

TEST(PlanCrops, LargeImageFallsBack) {
  auto p = plan_crops(2000, 3000, 448, 16);
  EXPECT_TRUE(p.fallback_used);
  EXPECT_LE(p.crops(), 16u);
  EXPECT_EQ(p, mmlora::testing::oracle_plan(2000, 3000, 448, 16));
}

TEST(PlanCrops, ExhaustiveGridMatchesOracle) {
  for (std::size_t max : {16, 36}) {
    for (std::size_t h = 1; h <= 2048; h += 7) {
      for (std::size_t w = 1; w <= 2048; w += 7) {
        const auto p = plan_crops(h, w, 448, max);
        ASSERT_EQ(p, mmlora::testing::oracle_plan(h, w, 448, max)) << h << "x" << w << " max " << max;
        ASSERT_LE(p.crops(), max);
        ASSERT_EQ(p.resize_h % 448, 0u);
        ASSERT_EQ(p.resize_w % 448, 0u);
        const bool primary = ((h + 447) / 448) * ((w + 447) / 448) <= max;
        ASSERT_EQ(p.fallback_used, !primary);
      }
    }
  }
}

TEST(PlanCrops, SmallImagesAlwaysSingleCrop) {
  for (std::size_t h = 1; h <= 448; h += 13)
    for (std::size_t w = 1; w <= 448; w += 11) EXPECT_EQ(plan_crops(h, w, 448, 1).crops(), 1u);
}

TEST(FallbackGrid, Examples) {
  EXPECT_EQ(fallback_aspect_grid(5000, 5000, 16), (std::pair<std::size_t, std::size_t>{4, 4}));
  EXPECT_EQ(fallback_aspect_grid(1000, 2000, 16), mmlora::testing::oracle_fallback(1000, 2000, 16));
  EXPECT_EQ(fallback_aspect_grid(1000, 2000, 16), (std::pair<std::size_t, std::size_t>{2, 4}));
  EXPECT_EQ(fallback_aspect_grid(123, 4567, 1), (std::pair<std::size_t, std::size_t>{1, 1}));
}

TEST(FallbackGrid, GlobalArgminOnRandomInputs) {
  SplitMix64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t h = 1 + rng() % 10000, w = 1 + rng() % 10000, max = 1 + rng() % 48;
    ASSERT_EQ(fallback_aspect_grid(h, w, max), mmlora::testing::oracle_fallback(h, w, max)) << h << " " << w << " " << max;
  }
}

TEST(Image, PpmAndPngRoundTrip) {
  Image img = gradient_image(5, 7);
  auto dir = std::filesystem::temp_directory_path();
  save_ppm(dir / "mmlora_t.ppm", img);
  save_png(dir / "mmlora_t.png", img);
  for (const char* name : {"mmlora_t.ppm", "mmlora_t.png"}) {
    Image back = load_image(dir / name);
    EXPECT_EQ(back.height, 5u);
    EXPECT_EQ(back.width, 7u);
    EXPECT_EQ(back.rgb, img.rgb) << name;
  }
  std::ofstream(dir / "mmlora_t.txt") << "hello";
  EXPECT_THROW(load_image(dir / "mmlora_t.txt"), DataError);
}

TEST(Resize, ConstantStaysConstantAndSameSizeIsIdentity) {
  Tensor c = Tensor::full({3, 4, 3}, 0.25);
  Tensor r = resize_bilinear(c, 9, 2);
  for (double v : r.data()) EXPECT_NEAR(v, 0.25, 1e-15);
  Tensor g = image_to_tensor(gradient_image(6, 5));
  Tensor same = resize_bilinear(g, 6, 5);
  for (std::size_t i = 0; i < g.numel(); ++i) EXPECT_EQ(same.data()[i], g.data()[i]);
}

TEST(Resize, HalfPixelInterpolation) {
  // One row, two pixels 0 and 1 -> four pixels at centers -0.25, 0.25, 0.75, 1.25.
  Tensor src({1, 2, 3}, {0, 0, 0, 1, 1, 1});
  Tensor up = resize_bilinear(src, 1, 4);
  const double expect[] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t x = 0; x < 4; ++x) EXPECT_NEAR(up.data()[x * 3], expect[x], 1e-15);
}

TEST(Crops, RowMajorOrder) {
  Tensor img = image_to_tensor(gradient_image(64, 96));
  auto plan = plan_crops(64, 96, 32, 16);
  ASSERT_EQ(plan.crops(), 6u);
  auto crops = make_crops(img, plan, 32);
  ASSERT_EQ(crops.size(), 6u);
  // Crop (1, 2) starts at pixel (32, 64).
  EXPECT_EQ(crops[5].data()[0], img.data()[(32 * 96 + 64) * 3]);
  EXPECT_EQ(crops[1].data()[0], img.data()[32 * 3]);
}

TEST(PatchEncoder, FullCropTokenCount) {
  VisionEncoderConfig cfg;
  cfg.crop_size = 448;
  cfg.patch = 32;
  cfg.width = 8;
  cfg.n_heads = 2;
  PatchEncoder enc(cfg);
  EXPECT_EQ(cfg.n_patches(), 196u);
  Tensor crop = Tensor::full({448, 448, 3}, 0.5);
  EXPECT_EQ(enc(crop).shape(), (Shape{196, 8}));
}

TEST(PatchEncoder, IdenticalCropsIdenticalOutputs) {
  PatchEncoder enc(VisionEncoderConfig::toy());
  SplitMix64 rng(1);
  Tensor a = random_tensor({32, 32, 3}, rng, 1.0, false);
  Tensor b = a.clone();
  Tensor ya = enc(a), yb = enc(b);
  for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_EQ(ya.data()[i], yb.data()[i]);
  EXPECT_THROW(enc(Tensor::zeros({16, 16, 3})), DimensionError);
}

TEST(PatchEncoder, PatchifyLayout) {
  std::vector<double> v(4 * 4 * 3);
  std::iota(v.begin(), v.end(), 0.0);
  Tensor p = patchify(Tensor({4, 4, 3}, v), 2);
  EXPECT_EQ(p.shape(), (Shape{4, 12}));
  // Patch 1 (top-right) row 0 starts at pixel (0, 2); its row 1 at pixel (1, 2).
  EXPECT_EQ(p.at(1, 0), (0 * 4 + 2) * 3);
  EXPECT_EQ(p.at(1, 6), (1 * 4 + 2) * 3);
}

TEST(PatchEncoder, GradientCheck) {
  VisionEncoderConfig cfg;
  cfg.crop_size = 4;
  cfg.patch = 2;
  cfg.width = 4;
  cfg.n_heads = 2;
  PatchEncoder enc(cfg);
  Tensor w0 = enc.patch_embed().weight;
  auto f = projected(
      [&](const std::vector<Tensor>& in) {
        PatchEncoder e = enc;
        e.patch_embed().weight = in[1];
        return e(in[0]);
      },
      3);
  SplitMix64 rng(5);
  EXPECT_LE(grad_check(f, {random_tensor({4, 4, 3}, rng), w0.clone()}).max_rel_error, 1e-4);
}

TEST(VisionProjector, WidthAndZeroWeights) {
  SplitMix64 rng(2);
  auto p = make_vision_projector(VisionEncoderConfig::toy(), 64, rng);
  EXPECT_EQ(p.out_features(), 64u);
  for (Tensor* t : {&p.fc1.weight, &p.fc1.bias, &p.fc2.weight, &p.fc2.bias})
    for (auto& v : t->mutable_data()) v = 0.0;
  Tensor y = p(random_tensor({5, 32}, rng, 1.0, false));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(VisionProjector, GradientCheck) {
  SplitMix64 rng(8);
  auto p = MlpProjector::init(4, 6, 5, rng);
  auto f = projected(
      [&](const std::vector<Tensor>& in) {
        MlpProjector q = p;
        q.fc1.weight = in[1];
        q.fc1.bias = in[2];
        q.fc2.weight = in[3];
        return q(in[0]);
      },
      4);
  auto res = grad_check(f, {random_tensor({3, 4}, rng), p.fc1.weight.clone(), p.fc1.bias.clone(), p.fc2.weight.clone()});
  EXPECT_LE(res.max_rel_error, 1e-4);
}
