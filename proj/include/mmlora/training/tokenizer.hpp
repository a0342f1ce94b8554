// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <span>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace mmlora {

/// Greedy longest-match tokenizer over a small vocabulary.
///
/// Ids are laid out as: the special tokens, then one token per byte value,
/// then multi-byte pieces. Byte tokens guarantee that any text encodes.
class Tokenizer {
 public:
  /// Built-in desk-scale vocabulary (number words and prompt words).
  static Tokenizer toy();
  /// {"format": "mmlora-vocab-1", "pieces": [str, ...]}.
  static Tokenizer from_json(const nlohmann::json& j);
  static Tokenizer load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  std::size_t vocab_size() const { return pieces_.size(); }
  /// Plain text only: special token spellings inside `text` are not parsed.
  std::vector<std::int64_t> encode(std::string_view text) const;
  /// Concatenated pieces; special ids decode to their spelling.
  std::string decode(std::span<const std::int64_t> ids) const;
  const std::string& piece(std::int64_t id) const;

  static constexpr std::int64_t kFirstByte = 8;
  static constexpr std::int64_t kFirstPiece = kFirstByte + 256;

 private:
  explicit Tokenizer(std::vector<std::string> extra_pieces);

  std::vector<std::string> pieces_;
  std::unordered_map<std::string, std::int64_t> lookup_;
  std::size_t longest_ = 1;
};

/// English words for 0..9, the toy speech labels.
const std::vector<std::string>& number_words();

}  // namespace mmlora
