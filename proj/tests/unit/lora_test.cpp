// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "../support/grad_check.hpp"
#include "mmlora/decoder/decoder.hpp"
#include "mmlora/errors.hpp"
#include "mmlora/lora/adapter.hpp"
#include "mmlora/lora/router.hpp"
#include "mmlora/numerics/serialize.hpp"

using namespace mmlora;

namespace {

std::vector<std::int64_t> tokens_for(std::uint64_t seed, std::size_t n = 9) {
  SplitMix64 rng(seed);
  std::vector<std::int64_t> out(n);
  for (auto& t : out) t = 8 + static_cast<std::int64_t>(rng() % 500);
  return out;
}

void randomize_b(LoraAdapter& adapter, std::uint64_t seed, double scale = 0.05) {
  SplitMix64 rng(seed);
  for (const auto& p : adapter.attach_points())
    for (auto& v : adapter.pair_mut(p)->b.mutable_data()) v = rng.normal(0.0, scale);
}

}  // namespace

TEST(LoraAdapter, ZeroInitIsExactIdentity) {
  Decoder model(DecoderConfig::toy());
  auto adapter = LoraAdapter::create(kLoraVision, 8, model, vision_attach_points(model), 3);
  for (const auto& p : adapter.attach_points())
    for (double b : adapter.pair(p)->b.data()) EXPECT_EQ(b, 0.0);
  ActiveAdapters active({&adapter});
  auto toks = tokens_for(1);
  Tensor base = model.forward(toks);
  Tensor with = model.forward(toks, {}, &active);
  for (std::size_t i = 0; i < base.numel(); ++i) EXPECT_EQ(base.data()[i], with.data()[i]);
}

TEST(LoraAdapter, CreationErrors) {
  Decoder model(DecoderConfig::toy());
  EXPECT_THROW(LoraAdapter::create("x", 0, model, {"layers.0.mlp.in"}, 0), ConfigError);
  EXPECT_THROW(LoraAdapter::create("x", 2, model, {"layers.9.mlp.in"}, 0), ConfigError);
  EXPECT_THROW(LoraAdapter::create("x", 2, model, {"layers.0.mlp.in", "layers.0.mlp.in"}, 0), ConfigError);
}

TEST(LoraAdapter, DeltaFollowsScaledLowRankFormula) {
  Decoder model(DecoderConfig::toy());
  auto adapter = LoraAdapter::create("t", 3, model, {"layers.1.mlp.in"}, 5, 6.0);
  randomize_b(adapter, 2);
  EXPECT_EQ(adapter.scaling(), 2.0);
  SplitMix64 rng(9);
  Tensor x = mmlora::testing::random_tensor({4, 64}, rng, 1.0, false);
  Tensor d = *adapter.delta("layers.1.mlp.in", x);
  const auto* pair = adapter.pair("layers.1.mlp.in");
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t o = 0; o < 256; o += 17) {
      double s = 0;
      for (std::size_t r = 0; r < 3; ++r) {
        double ax = 0;
        for (std::size_t i = 0; i < 64; ++i) ax += pair->a.at(r, i) * x.at(t, i);
        s += pair->b.at(o, r) * ax;
      }
      EXPECT_NEAR(d.at(t, o), 2.0 * s, 1e-12);
    }
  EXPECT_FALSE(adapter.delta("layers.0.mlp.in", x).has_value());
}

TEST(LoraAdapter, MergedMatchesDynamicPath) {
  Decoder model(DecoderConfig::toy());
  auto adapter = LoraAdapter::create(kLoraAudio, 4, model, audio_attach_points(model), 4);
  randomize_b(adapter, 5);
  ActiveAdapters active({&adapter});
  Decoder merged = merge(adapter, model);
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto toks = tokens_for(100 + s);
    Tensor dyn = model.forward(toks, {}, &active);
    Tensor mer = merged.forward(toks);
    for (std::size_t i = 0; i < dyn.numel(); ++i) EXPECT_NEAR(dyn.data()[i], mer.data()[i], 1e-9);
  }
}

TEST(LoraAdapter, MergeOfZeroBIsNoOpAndUnmergeRecovers) {
  Decoder model(DecoderConfig::toy());
  auto adapter = LoraAdapter::create(kLoraVision, 4, model, vision_attach_points(model), 6);
  EXPECT_EQ(merge(adapter, model).fingerprint(), model.fingerprint());

  randomize_b(adapter, 7, 0.5);
  Decoder round = unmerge(adapter, merge(adapter, model));
  for (const auto& site : model.linear_sites()) {
    const Linear* back = round.find_linear(site.path);
    for (std::size_t i = 0; i < site.layer->weight.numel(); ++i)
      EXPECT_NEAR(back->weight.data()[i], site.layer->weight.data()[i], 1e-12);
  }
}

TEST(LoraAdapter, ParameterCountMatchesEnumeration) {
  Decoder model(DecoderConfig::toy());
  auto adapter = LoraAdapter::create(kLoraAudio, 4, model, audio_attach_points(model), 0);
  // Enumerate the actual tensors and their element counts.
  std::size_t enumerated = 0;
  for (const auto& nt : adapter.trainable_parameters()) enumerated += nt.tensor.numel();
  // Hand enumeration for the toy shape: per layer, qkv 64->96 (8 query + 2*2 kv heads of 8), out 64->64,
  // mlp.in 64->256, mlp.out 256->64, each costing r*(in+out).
  const std::size_t per_layer = 4 * (64 + 96) + 4 * (64 + 64) + 4 * (64 + 256) + 4 * (256 + 64);
  EXPECT_EQ(enumerated, 2 * per_layer);
  EXPECT_EQ(adapter.parameter_count(), enumerated);
  EXPECT_EQ(lora_parameter_count(model.config(), 4), enumerated);
}

TEST(LoraAdapter, FullScaleRank320CountIsAbout460M) {
  const std::size_t n = lora_parameter_count(DecoderConfig::full_scale(), 320);
  // 32 layers * 320 * ((3072+5120) + (3072+3072) + (3072+12288) + (12288+3072))
  EXPECT_EQ(n, 461373440u);
  EXPECT_NEAR(static_cast<double>(n) / 1e6, 460.0, 5.0);
}

TEST(LoraAdapter, TrainableParametersAreOnlyPairsAndDisjointFromBase) {
  Decoder model(DecoderConfig::toy());
  auto adapter = LoraAdapter::create(kLoraVision, 2, model, vision_attach_points(model), 1);
  std::set<const void*> base_storage;
  std::set<std::uint64_t> base_fps;
  for (const auto& p : model.parameters()) {
    base_storage.insert(p.tensor.storage_id());
    base_fps.insert(fingerprint(p.tensor));
  }
  auto params = adapter.trainable_parameters();
  EXPECT_EQ(params.size(), 2 * adapter.attach_points().size());
  for (const auto& p : params) {
    EXPECT_TRUE(p.name.ends_with(".lora_a") || p.name.ends_with(".lora_b")) << p.name;
    EXPECT_FALSE(base_storage.contains(p.tensor.storage_id()));
    EXPECT_FALSE(base_fps.contains(fingerprint(p.tensor))) << p.name;
  }
}

TEST(LoraAdapter, SaveLoadRoundTrip) {
  Decoder model(DecoderConfig::toy());
  auto adapter = LoraAdapter::create(kLoraAudio, 3, model, {"layers.0.attn.qkv", "layers.1.mlp.out"}, 8, 1.5);
  randomize_b(adapter, 3);
  auto dir = std::filesystem::temp_directory_path() / "mmlora_adapter_ckpt";
  std::filesystem::remove_all(dir);
  adapter.save(dir);
  auto back = LoraAdapter::load(dir, model);
  EXPECT_EQ(back.name(), kLoraAudio);
  EXPECT_EQ(back.rank(), 3u);
  EXPECT_EQ(back.alpha(), 1.5);
  EXPECT_EQ(back.attach_points(), adapter.attach_points());
  for (const auto& p : adapter.attach_points()) {
    EXPECT_EQ(fingerprint(back.pair(p)->a), fingerprint(adapter.pair(p)->a));
    EXPECT_EQ(fingerprint(back.pair(p)->b), fingerprint(adapter.pair(p)->b));
  }
}

TEST(AdapterBank, AttachAndActivate) {
  Decoder model(DecoderConfig::toy());
  AdapterBank bank;
  bank.attach(LoraAdapter::create(kLoraAudio, 2, model, audio_attach_points(model), 1), model);
  EXPECT_THROW(bank.attach(LoraAdapter::create(kLoraAudio, 2, model, audio_attach_points(model), 2), model),
               ConfigError);
  DecoderConfig other = DecoderConfig::toy();
  other.d_model = 32;
  other.n_q_heads = 4;
  other.mlp_hidden = 128;
  Decoder small(other);
  EXPECT_THROW(bank.attach(LoraAdapter::create(kLoraVision, 2, small, vision_attach_points(small), 1), model),
               ConfigError);
  EXPECT_TRUE(bank.activate({kLoraVision}).empty());
  EXPECT_FALSE(bank.activate({kLoraAudio}).empty());
}

TEST(AdapterBank, TwoActiveAdaptersComposeAdditively) {
  Decoder model(DecoderConfig::toy());
  auto a = LoraAdapter::create(kLoraAudio, 2, model, audio_attach_points(model), 1);
  auto v = LoraAdapter::create(kLoraVision, 2, model, vision_attach_points(model), 2);
  randomize_b(a, 11);
  randomize_b(v, 12);
  ActiveAdapters both({&a, &v});
  Decoder merged = merge(v, merge(a, model));
  auto toks = tokens_for(77);
  Tensor dyn = model.forward(toks, {}, &both);
  Tensor mer = merged.forward(toks);
  for (std::size_t i = 0; i < dyn.numel(); ++i) EXPECT_NEAR(dyn.data()[i], mer.data()[i], 1e-9);
}

TEST(ModalityRouter, RuleTable) {
  ModalityRouter router;
  using V = std::vector<std::string>;
  EXPECT_EQ(router.route({true, false, false}), V{});
  EXPECT_EQ(router.route({true, false, true}), V{kLoraAudio});
  EXPECT_EQ(router.route({true, true, false}), V{kLoraVision});
  EXPECT_EQ(router.route({true, true, true}), V{kLoraVision});
  EXPECT_EQ(router.route({false, false, true}), V{kLoraAudio});
  EXPECT_EQ(router.route({false, true, false}), V{kLoraVision});
  EXPECT_EQ(router.route({false, true, true}), V{kLoraVision});
  EXPECT_THROW(router.route({false, false, false}), ConfigError);
  EXPECT_EQ(format_adapter_list({}), "[]");
  EXPECT_EQ(format_adapter_list({kLoraAudio}), "[LoRA_A]");
}

TEST(ModalityRouter, Deterministic) {
  ModalityRouter router;
  for (int i = 0; i < 8; ++i) {
    ModalitySet s{(i & 1) != 0, (i & 2) != 0, (i & 4) != 0};
    if (s.empty()) continue;
    EXPECT_EQ(router.route(s), router.route(s));
  }
}
