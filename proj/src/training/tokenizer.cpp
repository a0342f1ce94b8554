// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/training/tokenizer.hpp"

#include <fstream>

#include "mmlora/decoder/special_tokens.hpp"
#include "mmlora/errors.hpp"

namespace mmlora {
namespace {

constexpr const char* kVocabFormat = "mmlora-vocab-1";

std::vector<std::string> toy_pieces() {
  std::vector<std::string> p;
  for (const auto& w : number_words()) {
    p.push_back(w);
    p.push_back(" " + w);
  }
  for (const char* w : {"Transcribe", " the", " audio", " clip", " into", " text", "Translate", " to", " English",
                        "Describe", " image", " this", "What", " is", " in", " picture", "Answer", " question",
                        "Summarize", " conversation", "hello", " world", "yes", "no", " and", " a", " of"}) {
    p.push_back(w);
  }
  return p;
}

}  // namespace

const std::vector<std::string>& number_words() {
  static const std::vector<std::string> w = {"zero", "one", "two",   "three", "four",
                                             "five", "six", "seven", "eight", "nine"};
  return w;
}

Tokenizer::Tokenizer(std::vector<std::string> extra_pieces) {
  for (auto s : tokens::kSpecialText) pieces_.emplace_back(s);
  for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
  for (auto& p : extra_pieces) {
    if (p.size() < 2) throw ConfigError("vocabulary pieces must be at least two bytes: '" + p + "'");
    pieces_.push_back(std::move(p));
  }
  for (std::size_t id = kFirstByte; id < pieces_.size(); ++id) {
    if (!lookup_.emplace(pieces_[id], static_cast<std::int64_t>(id)).second)
      throw ConfigError("duplicate vocabulary piece '" + pieces_[id] + "'");
    longest_ = std::max(longest_, pieces_[id].size());
  }
}

Tokenizer Tokenizer::toy() { return Tokenizer(toy_pieces()); }

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kVocabFormat)
    throw ConfigError(std::string("vocabulary must declare format ") + kVocabFormat);
  return Tokenizer(j.at("pieces").get<std::vector<std::string>>());
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed vocabulary " + path.string() + ": " + e.what());
  }
}

nlohmann::json Tokenizer::to_json() const {
  std::vector<std::string> extra(pieces_.begin() + kFirstPiece, pieces_.end());
  return {{"format", kVocabFormat}, {"pieces", extra}};
}

std::vector<std::int64_t> Tokenizer::encode(std::string_view text) const {
  std::vector<std::int64_t> ids;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t len = std::min(longest_, text.size() - i);
    for (; len > 1; --len) {
      auto it = lookup_.find(std::string(text.substr(i, len)));
      if (it != lookup_.end()) {
        ids.push_back(it->second);
        break;
      }
    }
    if (len == 1) ids.push_back(kFirstByte + static_cast<unsigned char>(text[i]));
    i += len;
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const std::int64_t> ids) const {
  std::string out;
  for (auto id : ids) out += piece(id);
  return out;
}

const std::string& Tokenizer::piece(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size())
    throw DomainError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(pieces_.size()));
  return pieces_[static_cast<std::size_t>(id)];
}

}  // namespace mmlora
