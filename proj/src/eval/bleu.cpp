// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/eval/bleu.hpp"

#include <cctype>
#include <cmath>
#include <map>
#include <regex>

#include "mmlora/errors.hpp"
#include "mmlora/eval/metrics.hpp"

namespace mmlora {
namespace {

bool split_punct(unsigned char c) {
  return (c >= 0x20 && c <= 0x26) || (c >= 0x28 && c <= 0x2B) || c == 0x2F || (c >= 0x3A && c <= 0x40) ||
         (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E);
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::string encode_utf8(char32_t cp) {
  std::string s;
  if (cp >= 0xDC80 && cp <= 0xDCFF) return std::string(1, static_cast<char>(cp - 0xDC00));
  if (cp < 0x80) {
    s += static_cast<char>(cp);
  } else if (cp < 0x800) {
    s += static_cast<char>(0xC0 | (cp >> 6));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    s += static_cast<char>(0xE0 | (cp >> 12));
    s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    s += static_cast<char>(0xF0 | (cp >> 18));
    s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    s += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return s;
}

using NgramCounts = std::map<std::string, std::size_t>;

std::array<NgramCounts, 4> ngrams(const std::vector<std::string>& toks) {
  std::array<NgramCounts, 4> out;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
      std::string key = toks[i];
      for (std::size_t k = 1; k < n; ++k) key += '\x1f' + toks[i + k];
      ++out[n - 1][key];
    }
  }
  return out;
}

}  // namespace

std::string tokenize_13a(std::string_view raw) {
  std::string line(raw);
  replace_all(line, "<skipped>", "");
  replace_all(line, "-\n", "");
  replace_all(line, "\n", " ");
  if (line.find('&') != std::string::npos) {
    replace_all(line, "&quot;", "\"");
    replace_all(line, "&amp;", "&");
    replace_all(line, "&lt;", "<");
    replace_all(line, "&gt;", ">");
  }
  std::string spaced = " ";
  for (unsigned char c : line) {
    if (split_punct(c)) {
      spaced += ' ';
      spaced += static_cast<char>(c);
      spaced += ' ';
    } else {
      spaced += static_cast<char>(c);
    }
  }
  spaced += ' ';
  static const std::regex period_after(R"(([^0-9])([\.,]))");
  static const std::regex period_before(R"(([\.,])([^0-9]))");
  static const std::regex dash_after_digit(R"(([0-9])(-))");
  spaced = std::regex_replace(spaced, period_after, "$1 $2 ");
  spaced = std::regex_replace(spaced, period_before, " $1 $2");
  spaced = std::regex_replace(spaced, dash_after_digit, "$1 $2 ");
  return join_tokens(split_whitespace(spaced));
}

std::string tokenize_char(std::string_view line) {
  std::vector<std::string> toks;
  for (char32_t cp : utf8_code_points(line)) {
    if (cp < 0x80 && std::isspace(static_cast<int>(cp))) continue;
    if (cp == 0x3000 || cp == 0xA0) continue;
    toks.push_back(encode_utf8(cp));
  }
  return join_tokens(toks);
}

BleuTokenizer bleu_tokenizer_for(std::string_view lang) { return uses_cer(lang) ? BleuTokenizer::kChar : BleuTokenizer::k13a; }

const char* bleu_tokenizer_name(BleuTokenizer t) { return t == BleuTokenizer::kChar ? "char" : "13a"; }

BleuResult corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs, BleuTokenizer tok) {
  if (hyps.size() != refs.size())
    throw DimensionError("BLEU needs one reference per hypothesis (" + std::to_string(hyps.size()) + " vs " +
                         std::to_string(refs.size()) + ")");
  if (hyps.empty()) throw UndefinedMetricError("BLEU is undefined for an empty corpus");
  auto tokenize = [&](const std::string& s) {
    return split_whitespace(tok == BleuTokenizer::kChar ? tokenize_char(s) : tokenize_13a(s));
  };

  BleuResult r;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = tokenize(hyps[i]);
    const auto ref = tokenize(refs[i]);
    r.sys_len += h.size();
    r.ref_len += ref.size();
    const auto hn = ngrams(h), rn = ngrams(ref);
    for (std::size_t n = 0; n < 4; ++n) {
      for (const auto& [gram, count] : hn[n]) {
        r.total[n] += count;
        if (auto it = rn[n].find(gram); it != rn[n].end()) r.correct[n] += std::min(count, it->second);
      }
    }
  }

  r.brevity_penalty = 1.0;
  if (r.sys_len < r.ref_len)
    r.brevity_penalty =
        r.sys_len > 0 ? std::exp(1.0 - static_cast<double>(r.ref_len) / static_cast<double>(r.sys_len)) : 0.0;
  if (r.correct[0] + r.correct[1] + r.correct[2] + r.correct[3] == 0) return r;

  double smooth = 1.0, log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (r.total[n] == 0) break;
    if (r.correct[n] == 0) {
      smooth *= 2.0;
      r.precisions[n] = 100.0 / (smooth * static_cast<double>(r.total[n]));
    } else {
      r.precisions[n] = 100.0 * static_cast<double>(r.correct[n]) / static_cast<double>(r.total[n]);
    }
    log_sum += std::log(r.precisions[n]);
    ++orders;
  }
  r.score = r.brevity_penalty * std::exp(log_sum / static_cast<double>(orders));
  return r;
}

}  // namespace mmlora
