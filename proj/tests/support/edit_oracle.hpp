// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

// Full-matrix Levenshtein, kept separate from the rolling-row version under
// test, plus a random pair generator for word and character sequences.

#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

namespace mmlora::testing {

template <typename T>
std::size_t oracle_distance(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t best = d[i - 1][j - 1] + (a[i - 1] != b[j - 1]);
      best = std::min(best, d[i - 1][j] + 1);
      best = std::min(best, d[i][j - 1] + 1);
      d[i][j] = best;
    }
  return d[a.size()][b.size()];
}

struct WordPair {
  std::vector<std::string> hyp, ref;
  std::string hyp_text, ref_text;
};

struct CharPair {
  std::vector<char32_t> hyp, ref;
  std::string hyp_text, ref_text;
};

inline std::string utf8_of(const std::vector<char32_t>& s) {
  std::string out;
  for (char32_t c : s) {
    if (c < 0x80) {
      out += static_cast<char>(c);
    } else if (c < 0x800) {
      out += static_cast<char>(0xC0 | (c >> 6));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else {
      out += static_cast<char>(0xE0 | (c >> 12));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    }
  }
  return out;
}

/// Hypotheses may be empty; references never are.
inline WordPair random_word_pair(std::mt19937& rng) {
  static const std::vector<std::string> vocab = {"a", "b", "c", "dd", "ee", "f"};
  std::uniform_int_distribution<int> len(1, 12), word(0, static_cast<int>(vocab.size()) - 1);
  WordPair p;
  p.hyp.resize(len(rng) - 1);
  p.ref.resize(len(rng));
  for (auto& w : p.hyp) w = vocab[word(rng)];
  for (auto& w : p.ref) w = vocab[word(rng)];
  for (const auto& w : p.hyp) p.hyp_text += w + " ";
  for (const auto& w : p.ref) p.ref_text += w + " ";
  return p;
}

inline CharPair random_char_pair(std::mt19937& rng) {
  static const std::vector<char32_t> alphabet = {U'a', U'b', U'c', U'x', U'y', U'é', U'日', U'本', U'語'};
  std::uniform_int_distribution<int> len(1, 12), ch(0, static_cast<int>(alphabet.size()) - 1);
  CharPair p;
  p.hyp.resize(len(rng) - 1);
  p.ref.resize(len(rng));
  for (auto& c : p.hyp) c = alphabet[ch(rng)];
  for (auto& c : p.ref) c = alphabet[ch(rng)];
  p.hyp_text = utf8_of(p.hyp);
  p.ref_text = utf8_of(p.ref);
  return p;
}

}  // namespace mmlora::testing
