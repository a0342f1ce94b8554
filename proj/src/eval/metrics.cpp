// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/eval/metrics.hpp"

#include <algorithm>
#include <cctype>

#include "mmlora/errors.hpp"

namespace mmlora {
namespace {

bool ascii_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool unicode_space(char32_t c) {
  return (c < 0x80 && ascii_space(static_cast<unsigned char>(c))) || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

}  // namespace

std::string default_normalize(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (c < 0x80 && std::ispunct(c)) continue;
    if (ascii_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
  }
  return out;
}

std::string identity_normalize(std::string_view text) { return std::string(text); }

std::vector<char32_t> utf8_code_points(std::string_view s) {
  std::vector<char32_t> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    bool ok = len > 0 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) ok = (static_cast<unsigned char>(s[i + k]) >> 6) == 0x2;
    if (!ok) {
      out.push_back(0xDC00 + c);  // lone byte, kept distinct from valid text
      ++i;
      continue;
    }
    char32_t cp = len == 1 ? c : len == 2 ? (c & 0x1F) : len == 3 ? (c & 0x0F) : (c & 0x07);
    for (std::size_t k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && ascii_space(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !ascii_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

EditStats word_edits(std::string_view hyp, std::string_view ref, const Normalizer& normalize) {
  const auto r = split_whitespace(normalize(ref));
  if (r.empty()) throw UndefinedMetricError("word error rate needs a nonempty reference");
  return {edit_distance(split_whitespace(normalize(hyp)), r), r.size()};
}

EditStats char_edits(std::string_view hyp, std::string_view ref, const Normalizer& normalize) {
  auto chars = [&](std::string_view s) {
    auto cps = utf8_code_points(normalize(s));
    std::erase_if(cps, unicode_space);
    return cps;
  };
  const auto r = chars(ref);
  if (r.empty()) throw UndefinedMetricError("character error rate needs a nonempty reference");
  return {edit_distance(chars(hyp), r), r.size()};
}

double wer(std::string_view hyp, std::string_view ref, const Normalizer& normalize) {
  return word_edits(hyp, ref, normalize).rate();
}

double cer(std::string_view hyp, std::string_view ref, const Normalizer& normalize) {
  return char_edits(hyp, ref, normalize).rate();
}

bool uses_cer(std::string_view lang) {
  std::string l;
  for (char c : lang) l += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return l == "ja" || l == "zh" || l.starts_with("ja-") || l.starts_with("zh-");
}

EditStats error_edits(std::string_view hyp, std::string_view ref, std::string_view lang) {
  return uses_cer(lang) ? char_edits(hyp, ref, default_normalize) : word_edits(hyp, ref, default_normalize);
}

double error_rate(std::string_view hyp, std::string_view ref, std::string_view lang) {
  return error_edits(hyp, ref, lang).rate();
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && ascii_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && ascii_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

CotSplit cot_split(std::string_view output) {
  constexpr std::string_view kSep = "<sep>";
  const auto pos = output.find(kSep);
  if (pos == std::string_view::npos) return {"", trim(output), false};
  return {trim(output.substr(0, pos)), trim(output.substr(pos + kSep.size())), true};
}

}  // namespace mmlora
