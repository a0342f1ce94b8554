// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace mmlora {

using Normalizer = std::function<std::string(std::string_view)>;

/// ASCII lowercase, ASCII punctuation removed, whitespace runs collapsed.
/// Non-ASCII bytes pass through untouched.
std::string default_normalize(std::string_view text);
std::string identity_normalize(std::string_view text);

/// Splits UTF-8 into code points (malformed bytes become single units).
std::vector<char32_t> utf8_code_points(std::string_view text);
std::vector<std::string> split_whitespace(std::string_view text);

/// Levenshtein distance with unit costs.
template <typename T>
std::size_t edit_distance(const std::vector<T>& hyp, const std::vector<T>& ref) {
  std::vector<std::size_t> row(ref.size() + 1);
  for (std::size_t j = 0; j <= ref.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[ref.size()];
}

struct EditStats {
  std::size_t edits = 0;
  std::size_t ref_length = 0;
  double rate() const { return static_cast<double>(edits) / static_cast<double>(ref_length); }
};

/// Word edits over whitespace tokens. Throws UndefinedMetricError when the
/// normalized reference has no tokens.
EditStats word_edits(std::string_view hyp, std::string_view ref, const Normalizer& normalize = default_normalize);
/// Code-point edits with all whitespace removed.
EditStats char_edits(std::string_view hyp, std::string_view ref, const Normalizer& normalize = identity_normalize);

double wer(std::string_view hyp, std::string_view ref, const Normalizer& normalize = default_normalize);
double cer(std::string_view hyp, std::string_view ref, const Normalizer& normalize = identity_normalize);

/// Japanese and Chinese are scored by characters, everything else by words.
bool uses_cer(std::string_view lang);
EditStats error_edits(std::string_view hyp, std::string_view ref, std::string_view lang);
double error_rate(std::string_view hyp, std::string_view ref, std::string_view lang);

struct CotSplit {
  std::string transcript;  // empty when no separator
  std::string translation;
  bool separator_found = false;
};

/// Splits on the first literal "<sep>"; the trimmed remainder is the
/// translation. Without a separator the whole trimmed output is.
CotSplit cot_split(std::string_view output);

std::string trim(std::string_view s);

}  // namespace mmlora
