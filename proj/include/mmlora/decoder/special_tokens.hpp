// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace mmlora::tokens {

// Fixed ids shared by the tokenizer, the decoder's span alignment check and
// the SFT renderer. Every vocabulary file must place these first.
inline constexpr std::int64_t kPad = 0;
inline constexpr std::int64_t kUser = 1;
inline constexpr std::int64_t kAssistant = 2;
inline constexpr std::int64_t kEnd = 3;
inline constexpr std::int64_t kImage = 4;
inline constexpr std::int64_t kAudio = 5;
inline constexpr std::int64_t kSep = 6;
inline constexpr std::int64_t kEndOfText = 7;
inline constexpr std::int64_t kNumSpecial = 8;

inline constexpr std::array<std::string_view, kNumSpecial> kSpecialText = {
    "<|pad|>", "<|user|>", "<|assistant|>", "<|end|>", "<image>", "<audio>", "<sep>", "<|endoftext|>"};

inline constexpr bool is_placeholder(std::int64_t id) { return id == kImage || id == kAudio; }

}  // namespace mmlora::tokens
