// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace mmlora {

enum class BleuTokenizer { k13a, kChar };

/// The mteval-v13a tokenization: punctuation split off, periods and commas
/// split unless inside a number, dashes after digits split.
std::string tokenize_13a(std::string_view line);
/// One token per code point, whitespace dropped.
std::string tokenize_char(std::string_view line);

/// Character tokenization for Japanese and Chinese targets, 13a otherwise.
BleuTokenizer bleu_tokenizer_for(std::string_view lang);
const char* bleu_tokenizer_name(BleuTokenizer t);

struct BleuResult {
  double score = 0.0;  // 0..100
  std::array<double, 4> precisions{};
  std::array<std::size_t, 4> correct{};
  std::array<std::size_t, 4> total{};
  double brevity_penalty = 0.0;
  std::size_t sys_len = 0;
  std::size_t ref_len = 0;
};

/// Corpus BLEU-4 with one reference per hypothesis and exponential
/// smoothing for orders without matches. Orders with no hypothesis n-grams
/// at all are left out of the geometric mean. Throws DimensionError on a
/// length mismatch and UndefinedMetricError on an empty corpus.
BleuResult corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
                       BleuTokenizer tokenizer = BleuTokenizer::k13a);

}  // namespace mmlora
