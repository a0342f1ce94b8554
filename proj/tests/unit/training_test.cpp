// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "../support/grad_check.hpp"
#include "mmlora/audio/wav.hpp"
#include "mmlora/decoder/special_tokens.hpp"
#include "mmlora/errors.hpp"
#include "mmlora/training/stages.hpp"
#include "mmlora/vision/image.hpp"

using namespace mmlora;
using mmlora::testing::random_tensor;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mmlora_training_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

PlaceholderResolver fixed_tokens(std::size_t audio, std::size_t image) {
  return [=](Modality m, const std::string& ref) -> std::optional<std::size_t> {
    if (ref == "missing") return std::nullopt;
    return m == Modality::kAudio ? audio : image;
  };
}

SftSample asr_sample(std::string label = "hello") {
  SftSample s;
  s.task = "asr";
  s.prompt = kAsrPrompt;
  s.audio = "clip.wav";
  s.label = std::move(label);
  s.lang = "en";
  return s;
}

StageSpec short_stage(const std::string& name, std::size_t steps) {
  StageSpec s = find_stage(standard_schedules(), name);
  s.steps = steps;
  return s;
}

std::vector<std::int64_t> text_prompt(const Tokenizer& tok) {
  std::vector<std::int64_t> p = {tokens::kUser};
  for (auto id : tok.encode("What is one and two")) p.push_back(id);
  p.push_back(tokens::kEnd);
  p.push_back(tokens::kAssistant);
  return p;
}

}  // namespace

TEST(Tokenizer, GreedyLongestMatchAndByteFallback) {
  const auto tok = Tokenizer::toy();
  const auto ids = tok.encode("Transcribe the audio");
  ASSERT_EQ(ids.size(), 3u);
  for (auto id : ids) EXPECT_GE(id, Tokenizer::kFirstPiece);
  const auto q = tok.encode("q!");
  EXPECT_EQ(q, (std::vector<std::int64_t>{Tokenizer::kFirstByte + 'q', Tokenizer::kFirstByte + '!'}));
  for (std::string s : {"", "hello world", "zebra 123 \xe6\x97\xa5", "seven.eight"}) EXPECT_EQ(tok.decode(tok.encode(s)), s);
  EXPECT_THROW(tok.piece(static_cast<std::int64_t>(tok.vocab_size())), DomainError);
  EXPECT_LE(tok.vocab_size(), DecoderConfig::toy().vocab_size);
}

TEST(Tokenizer, JsonRoundTripAndErrors) {
  const auto tok = Tokenizer::toy();
  const auto back = Tokenizer::from_json(tok.to_json());
  EXPECT_EQ(back.vocab_size(), tok.vocab_size());
  EXPECT_EQ(back.encode("nine and eight"), tok.encode("nine and eight"));
  EXPECT_THROW(Tokenizer::from_json({{"format", "other"}, {"pieces", {"ab"}}}), ConfigError);
  EXPECT_THROW(Tokenizer::from_json({{"format", "mmlora-vocab-1"}, {"pieces", {"ab", "ab"}}}), ConfigError);
  EXPECT_THROW(Tokenizer::from_json({{"format", "mmlora-vocab-1"}, {"pieces", {"x"}}}), ConfigError);
}

TEST(RenderSft, AsrFixtureByteForByte) {
  EXPECT_EQ(render_sft_text(asr_sample()),
            "<|user|><audio>Transcribe the audio clip into text.<|end|><|assistant|>hello<|end|>");
  const auto tok = Tokenizer::toy();
  const auto r = render_sft(asr_sample(), tok, fixed_tokens(5, 16));
  EXPECT_EQ(collapse_placeholders(r, tok), render_sft_text(asr_sample()));
}

TEST(RenderSft, MaskCoversExactlyLabelAndClosingEnd) {
  const auto tok = Tokenizer::toy();
  const auto r = render_sft(asr_sample(), tok, fixed_tokens(5, 16));
  const auto label = tok.encode("hello");
  ASSERT_EQ(r.ids.size(), r.loss_mask.size());
  const std::size_t n_masked = label.size() + 1;
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    const bool tail = i >= r.ids.size() - n_masked;
    EXPECT_EQ(r.loss_mask[i], tail ? 1 : 0) << i;
  }
  EXPECT_EQ(r.ids.back(), tokens::kEnd);
  ASSERT_EQ(r.spans.size(), 1u);
  EXPECT_EQ(r.spans[0].start, 1u);
  EXPECT_EQ(r.spans[0].length, 5u);
  for (std::size_t i = 1; i <= 5; ++i) EXPECT_EQ(r.ids[i], tokens::kAudio);
}

TEST(RenderSft, EmptyPromptStaysWellFormed) {
  auto s = asr_sample("yes");
  s.task = "sqqa";
  s.prompt.clear();
  EXPECT_EQ(render_sft_text(s), "<|user|><audio><|end|><|assistant|>yes<|end|>");
  const auto tok = Tokenizer::toy();
  const auto r = render_sft(s, tok, fixed_tokens(3, 16));
  const std::vector<std::int64_t> expect = {tokens::kUser,      tokens::kAudio, tokens::kAudio, tokens::kAudio,
                                            tokens::kEnd,       tokens::kAssistant, tok.encode("yes")[0], tokens::kEnd};
  EXPECT_EQ(r.ids, expect);
}

TEST(RenderSft, ImagesPrecedeAudioAndErrorsAreDataErrors) {
  SftSample s = asr_sample();
  s.images = {"a.png", "b.png"};
  EXPECT_EQ(render_sft_text(s),
            "<|user|><image><image><audio>Transcribe the audio clip into text.<|end|><|assistant|>hello<|end|>");
  const auto tok = Tokenizer::toy();
  const auto r = render_sft(s, tok, fixed_tokens(2, 3));
  ASSERT_EQ(r.spans.size(), 3u);
  EXPECT_EQ(r.spans[1].start, 4u);
  EXPECT_EQ(r.spans[2].start, 7u);
  s.audio = "missing";
  EXPECT_THROW(render_sft(s, tok, fixed_tokens(2, 3)), DataError);
  auto empty = asr_sample("");
  EXPECT_THROW(render_sft(empty, tok, fixed_tokens(2, 3)), DataError);
}

TEST(RenderSft, ShiftAndGenerationPrompt) {
  const auto tok = Tokenizer::toy();
  const auto r = render_sft(asr_sample(), tok, fixed_tokens(2, 1));
  const auto ex = shift_for_training(r);
  ASSERT_EQ(ex.inputs.size(), r.ids.size() - 1);
  for (std::size_t i = 0; i < ex.inputs.size(); ++i) {
    EXPECT_EQ(ex.inputs[i], r.ids[i]);
    EXPECT_EQ(ex.targets[i], r.ids[i + 1]);
    EXPECT_EQ(ex.mask[i], r.loss_mask[i + 1]);
  }
  const auto prompt = generation_prompt(r);
  EXPECT_EQ(prompt.back(), tokens::kAssistant);
  EXPECT_EQ(r.loss_mask[prompt.size()], 1);
  EXPECT_EQ(r.loss_mask[prompt.size() - 1], 0);
}

// Perturbing logits at any position whose target is masked, placeholders
// and prompt included, must leave both the loss and every gradient alone.
TEST(LossMasking, PlaceholderAndPromptLogitsAreInert) {
  const auto tok = Tokenizer::toy();
  SftSample s = asr_sample("three four");
  s.images = {"x.png"};
  const auto ex = shift_for_training(render_sft(s, tok, fixed_tokens(6, 4)));
  SplitMix64 rng(17);
  const std::size_t t = ex.inputs.size(), v = 40;
  std::vector<std::int64_t> targets = ex.targets;
  for (auto& id : targets) id %= static_cast<std::int64_t>(v);
  Tensor base = random_tensor({t, v}, rng);
  auto run = [&](const Tensor& logits) {
    Tensor l = logits.clone(true);
    auto loss = ops::cross_entropy_masked(l, targets, ex.mask);
    loss.loss.backward();
    return std::pair{loss.loss.item(), l.grad()};
  };
  const auto [loss0, grad0] = run(base);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor p = base.clone();
    auto d = p.mutable_data();
    for (std::size_t i = 0; i < t; ++i) {
      if (ex.mask[i]) continue;
      for (std::size_t j = 0; j < v; ++j) d[i * v + j] += rng.normal(0.0, 5.0);
    }
    const auto [loss1, grad1] = run(p);
    EXPECT_EQ(loss1, loss0);
    EXPECT_EQ(grad1, grad0);
  }
  for (std::size_t i = 0; i < t; ++i) {
    if (ex.mask[i]) continue;
    for (std::size_t j = 0; j < v; ++j) EXPECT_EQ(grad0[i * v + j], 0.0);
  }
}

TEST(SftJsonl, RoundTripAndValidation) {
  const auto dir = scratch_dir("jsonl");
  SftSample a = asr_sample();
  SftSample b;
  b.task = "caption";
  b.images = {"i.png"};
  b.label = "no";
  write_sft_jsonl(dir / "d.jsonl", {a, b});
  const auto back = read_sft_jsonl(dir / "d.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].audio, a.audio);
  EXPECT_EQ(back[0].prompt, a.prompt);
  EXPECT_EQ(back[1].images, b.images);
  EXPECT_FALSE(back[1].audio.has_value());
  EXPECT_THROW(sft_from_json({{"task", "asr"}, {"label", ""}}), DataError);
  EXPECT_THROW(sft_from_json({{"task", "asr"}}), DataError);
  EXPECT_THROW(sft_from_json({{"task", "asr"}, {"label", "x"}, {"images", "a.png"}}), DataError);
  std::ofstream(dir / "bad.jsonl") << "{\"task\": \"asr\", \"label\": \"x\"}\nnot json\n";
  EXPECT_THROW(read_sft_jsonl(dir / "bad.jsonl"), DataError);
}

TEST(Schedules, MatchAssignmentTable) {
  using G = std::set<std::string>;
  struct Row {
    const char* name;
    G trainable;
    double lr;
  };
  const std::vector<Row> table = {
      {"vision_projector_alignment", {"vision_projector"}, 1e-4},
      {"vision_joint", {"vision_encoder", "vision_projector"}, 1e-4},
      {"vision_generative", {"LoRA_V", "vision_encoder", "vision_projector"}, 1e-4},
      {"vision_multiframe", {"LoRA_V", "vision_projector"}, 1e-4},
      {"speech_pretrain", {"audio_encoder", "audio_projector"}, 4e-5},
      {"speech_posttrain", {"audio_projector", "LoRA_A"}, 1e-4},
      {"vision_speech_joint", {"LoRA_V", "vision_encoder", "vision_projector"}, 1e-4},
  };
  const G all = {"decoder", "audio_encoder", "audio_projector", "vision_encoder", "vision_projector", "LoRA_A", "LoRA_V"};
  const auto stages = standard_schedules();
  ASSERT_EQ(stages.size(), table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& s = stages[i];
    EXPECT_EQ(s.name, table[i].name);
    EXPECT_EQ(G(s.trainable_groups.begin(), s.trainable_groups.end()), table[i].trainable) << s.name;
    G frozen;
    for (const auto& g : all)
      if (!table[i].trainable.contains(g)) frozen.insert(g);
    EXPECT_EQ(G(s.frozen_groups.begin(), s.frozen_groups.end()), frozen) << s.name;
    EXPECT_TRUE(frozen.contains("decoder"));
    EXPECT_EQ(s.learning_rate, table[i].lr) << s.name;
    EXPECT_EQ(s.steps, 2000u);
    EXPECT_NO_THROW(s.validate());
  }
  EXPECT_EQ(find_stage(stages, "speech_posttrain").max_audio_tokens, std::optional<std::size_t>(375));
  EXPECT_FALSE(find_stage(stages, "speech_pretrain").max_audio_tokens.has_value());
  for (const auto& s : standard_schedules(1.0)) EXPECT_EQ(s.steps, 50000u);
  for (const auto& s : standard_schedules(0.0)) EXPECT_EQ(s.steps, 0u);
  EXPECT_THROW(find_stage(stages, "nope"), ConfigError);
}

TEST(Schedules, OverridesAndPartitionValidation) {
  nlohmann::json j = {{"step_scale", 0.001}, {"stages", {{"speech_pretrain", {{"learning_rate", 1e-3}, {"steps", 7}}}}}};
  const auto s = apply_schedule_override(standard_schedules(), j);
  EXPECT_EQ(find_stage(s, "speech_pretrain").steps, 7u);
  EXPECT_EQ(find_stage(s, "speech_pretrain").learning_rate, 1e-3);
  EXPECT_EQ(find_stage(s, "speech_posttrain").steps, 50u);
  EXPECT_THROW(apply_schedule_override(standard_schedules(), {{"stages", {{"bogus", {{"steps", 1}}}}}}), ConfigError);
  EXPECT_THROW(apply_schedule_override(standard_schedules(), {{"stages", {{"speech_pretrain", {{"lr", 1}}}}}}),
               ConfigError);
  EXPECT_THROW(apply_schedule_override(standard_schedules(), {{"steps", 1}}), ConfigError);

  StageSpec bad = find_stage(standard_schedules(), "speech_pretrain");
  bad.frozen_groups.push_back("audio_encoder");
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = find_stage(standard_schedules(), "speech_pretrain");
  bad.frozen_groups.pop_back();
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(FreezeMask, DetectsAndNamesPerturbedGroup) {
  MultimodalModel m{MultimodalConfig{}};
  const auto stage = find_stage(standard_schedules(), "speech_posttrain");
  const auto mask = capture_freeze_mask(m, stage);
  EXPECT_TRUE(verify_frozen(mask, m).passed);
  Tensor w = m.decoder.layers()[1].mlp_out.weight;
  w.mutable_data()[3] += 1e-12;
  const auto check = verify_frozen(mask, m);
  EXPECT_FALSE(check.passed);
  EXPECT_EQ(check.changed_groups, std::vector<std::string>{"decoder"});
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps).
  Tensor p({3}, {1.0, -2.0, 0.5}, true);
  Adam opt({p}, 0.1);
  ops::sum(ops::mul(p, Tensor({3}, {3.0, -0.5, 0.0}))).backward();
  opt.step();
  EXPECT_NEAR(p.data()[0], 0.9, 1e-8);
  EXPECT_NEAR(p.data()[1], -1.9, 1e-8);
  EXPECT_EQ(p.data()[2], 0.5);
  EXPECT_FALSE(p.has_grad() && p.grad()[0] != 0.0);
}

TEST(Adam, MinimisesQuadratic) {
  Tensor p({2}, {4.0, -3.0}, true);
  Adam opt({p}, 0.05);
  for (int i = 0; i < 500; ++i) {
    ops::sum(ops::mul(p, p)).backward();
    opt.step();
  }
  EXPECT_LT(std::abs(p.data()[0]) + std::abs(p.data()[1]), 0.05);
}

TEST(RunStage, ZeroStepsLeavesEverythingUnchanged) {
  MultimodalModel m{MultimodalConfig{}};
  const auto data = synthetic_tone_dataset();
  const auto before = m.fingerprints();
  const auto r = run_stage(short_stage("speech_pretrain", 0), m, data, Tokenizer::toy());
  EXPECT_TRUE(r.losses.empty());
  EXPECT_EQ(r.steps, 0u);
  EXPECT_EQ(r.before, before);
  EXPECT_EQ(r.after, before);
}

TEST(RunStage, PretrainMovesOnlyAudioTowerWithZeroFrozenGradient) {
  MultimodalModel m{MultimodalConfig{}};
  const auto data = synthetic_tone_dataset();
  const auto r = run_stage(short_stage("speech_pretrain", 10), m, data, Tokenizer::toy());
  EXPECT_EQ(r.losses.size(), 10u);
  EXPECT_EQ(r.frozen_grad_sq, 0.0);
  for (const auto& g : parameter_groups()) {
    const bool trained = g == "audio_encoder" || g == "audio_projector";
    EXPECT_EQ(r.before.at(g) != r.after.at(g), trained) << g;
  }
  for (const auto& p : m.decoder.parameters()) EXPECT_FALSE(p.tensor.has_grad() && p.tensor.requires_grad()) << p.name;
}

TEST(RunStage, FrozenMutationIsAHardFailure) {
  MultimodalModel m{MultimodalConfig{}};
  const auto data = synthetic_tone_dataset();
  RunOptions opts;
  opts.on_step = [&](std::size_t step, double) {
    if (step == 2) {
      Tensor e = m.audio_encoder.parameters().front().tensor;
      e.mutable_data()[0] += 0.5;
    }
  };
  try {
    run_stage(short_stage("speech_posttrain", 3), m, data, Tokenizer::toy(), opts);
    FAIL() << "expected FrozenMutationError";
  } catch (const FrozenMutationError& e) {
    EXPECT_NE(std::string(e.what()).find("audio_encoder"), std::string::npos);
  }
}

TEST(RunStage, PosttrainKeepsAudioEncoderAndIsReproducible) {
  const auto data = synthetic_tone_dataset();
  const auto tok = Tokenizer::toy();
  auto run = [&] {
    MultimodalModel m{MultimodalConfig{}};
    RunOptions o;
    o.seed = 5;
    auto a = run_stage(short_stage("speech_pretrain", 15), m, data, tok, o);
    auto b = run_stage(short_stage("speech_posttrain", 15), m, data, tok, o);
    EXPECT_EQ(b.before.at("audio_encoder"), b.after.at("audio_encoder"));
    EXPECT_NE(b.before.at("LoRA_A"), b.after.at("LoRA_A"));
    return std::pair{a.to_json(), b.to_json()};
  };
  const auto first = run(), second = run();
  EXPECT_EQ(first.first.dump(), second.first.dump());
  EXPECT_EQ(first.second.dump(), second.second.dump());
}

TEST(RunStage, SpeechLossFallsOverShortRun) {
  MultimodalModel m{MultimodalConfig{}};
  const auto data = synthetic_tone_dataset();
  auto r = run_stage(short_stage("speech_posttrain", 300), m, data, Tokenizer::toy());
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    head += r.losses[i];
    tail += r.losses[r.losses.size() - 1 - i];
  }
  EXPECT_LT(tail, 0.5 * head);
}

TEST(RunStage, VisionStageKeepsTextOnlyGenerationIdentical) {
  MultimodalModel m{MultimodalConfig{}};
  const auto tok = Tokenizer::toy();
  const auto prompt = text_prompt(tok);
  const auto active = m.route({true, false, false});
  EXPECT_TRUE(active.empty());
  const auto baseline = m.decoder.generate_greedy(prompt, {}, 12);
  const auto data = synthetic_image_dataset();
  const auto r = run_stage(short_stage("vision_generative", 8), m, data, tok);
  EXPECT_NE(r.before.at("LoRA_V"), r.after.at("LoRA_V"));
  EXPECT_EQ(r.before.at("decoder"), r.after.at("decoder"));
  EXPECT_EQ(m.decoder.generate_greedy(prompt, {}, 12), baseline);
}

TEST(Payloads, FilesResolveRelativeToManifest) {
  const auto dir = scratch_dir("payloads");
  write_wav(dir / "tone.wav", Waveform{16000, synth_tone(440.0, 0.5, 0.5, 0.0)});
  Image img{40, 70, std::vector<std::uint8_t>(40 * 70 * 3, 128)};
  save_png(dir / "pic.png", img);
  SftSample s = asr_sample("one");
  s.audio = "tone.wav";
  s.images = {"pic.png"};
  write_sft_jsonl(dir / "m.jsonl", {s});
  const auto data = load_dataset(dir / "m.jsonl");
  MultimodalModel m{MultimodalConfig{}};
  const auto p = prepare_sample(data.samples[0], m, Tokenizer::toy(), data.payloads, std::nullopt, 16);
  ASSERT_EQ(p.spans.size(), 2u);
  // 70x40 at 32-pixel crops plans a 2x3 grid of 16-patch crops; 0.5 s is 48 frames.
  EXPECT_EQ(p.rendered.spans[0].length, m.image_tokens(40, 70, 16));
  EXPECT_EQ(p.spans[0].embeddings.dim(0), p.rendered.spans[0].length);
  EXPECT_EQ(p.rendered.spans[1].length, subsample_length(48));
  EXPECT_EQ(p.spans[1].embeddings.shape(), (Shape{6, 64}));
  const auto truncated = prepare_sample(data.samples[0], m, Tokenizer::toy(), data.payloads, 2, 16);
  EXPECT_EQ(truncated.rendered.spans[1].length, 2u);
  SftSample gone = s;
  gone.audio = "absent.wav";
  EXPECT_THROW(prepare_sample(gone, m, Tokenizer::toy(), data.payloads), DataError);
}

TEST(MultimodalModel, SaveLoadPreservesEveryGroup) {
  const auto dir = scratch_dir("model");
  MultimodalModel m{MultimodalConfig{}};
  run_stage(short_stage("speech_posttrain", 3), m, synthetic_tone_dataset(), Tokenizer::toy());
  m.save(dir);
  const auto back = MultimodalModel::load(dir);
  EXPECT_EQ(back.fingerprints(), m.fingerprints());
  EXPECT_THROW(m.group("nope"), ConfigError);
  EXPECT_THROW(MultimodalModel::load(dir / "nowhere"), DataError);
}
