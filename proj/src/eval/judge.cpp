// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/eval/judge.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <semaphore>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mmlora/errors.hpp"
#include "mmlora/numerics/serialize.hpp"

namespace mmlora {
namespace {

// Verbatim scoring prompts. Style delimiters of the source listings are
// already removed; placeholders use {field} and literal braces are doubled.
const std::vector<JudgeTemplate> kTemplates = {
    {"mt_bench_turn1",
     R"tpl(You are a helpful assistant.)tpl",
     R"tpl([Instruction]
Please act as an impartial judge and evaluate the quality of the response provided by an AI assistant to the user question displayed below. Your evaluation should consider factors such as the helpfulness, relevance, accuracy, depth, creativity, and level of detail of the response. Begin your evaluation by providing a short explanation. Be as objective as possible. After providing your explanation, you must rate the response on a scale of 1 to 10 by strictly following this format: "[[rating]]", for example: "Rating: [[5]]".

[Question]
{question}

[The Start of Assistant's Answer]
{answer}
[The End of Assistant's Answer])tpl"},
    {"mt_bench_turn1_math",
     R"tpl(You are a helpful assistant.)tpl",
     R"tpl([Instruction]
Please act as an impartial judge and evaluate the quality of the response provided by an AI assistant to the user question displayed below. Your evaluation should consider correctness and helpfulness. You will be given a reference answer and the assistant's answer. Begin your evaluation by comparing the assistant's answer with the reference answer. Identify and correct any mistakes. Be as objective as possible. After providing your explanation, you must rate the response on a scale of 1 to 10 by strictly following this format: "[[rating]]", for example: "Rating: [[5]]".

[Question]
{question}

[The Start of Reference Answer]
{ref_answer}
[The End of Reference Answer]

[The Start of Assistant's Answer]
{answer}
[The End of Assistant's Answer])tpl"},
    {"mt_bench_turn2",
     R"tpl(Please act as an impartial judge and evaluate the quality of the response provided by an AI assistant to the user question displayed below. Your evaluation should consider factors such as the helpfulness, relevance, accuracy, depth, creativity, and level of detail of the response. You evaluation should focus on the assistant's answer to the second user question. Begin your evaluation by providing a short explanation. Be as objective as possible. After providing your explanation, you must rate the response on a scale of 1 to 10 by strictly following this format: "[[rating]]", for example: "Rating: [[5]]".)tpl",
     R"tpl(<|The Start of Assistant A's Conversation with User|>

### User:
{question_1}

### Assistant A:
{answer_1}

### User:
{question_2}

### Assistant A:
{answer_2}

<|The End of Assistant A's Conversation with User|>)tpl"},
    {"mt_bench_turn2_math",
     R"tpl(Please act as an impartial judge and evaluate the quality of the response provided by an AI assistant to the user question. Your evaluation should consider correctness and helpfulness. You will be given a reference answer and the assistant's answer. You evaluation should focus on the assistant's answer to the second question. Begin your evaluation by comparing the assistant's answer with the reference answer. Identify and correct any mistakes. Be as objective as possible. After providing your explanation, you must rate the response on a scale of 1 to 10 by strictly following this format: "[[rating]]", for example: "Rating: [[5]]".)tpl",
     R"tpl(<|The Start of Reference Answer|>

### User:
{question_1}

### Reference answer:
{ref_answer_1}

### User:
{question_2}

### Reference answer:
{ref_answer_2}

<|The End of Reference Answer|>


<|The Start of Assistant A's Conversation with User|>

### User:
{question_1}

### Assistant A:
{answer_1}

### User:
{question_2}

### Assistant A:
{answer_2}

<|The End of Assistant A's Conversation with User|>)tpl"},
    {"airbench_chat",
     R"tpl()tpl",
     R"tpl(You are a helpful and precise assistant for checking the quality of the answer.
[Detailed Audio Description]
{meta_info}
[Question]
{question}
[The Start of Assistant 1s Answer]
{reference}
[The End of Assistant 1s Answer]
[The Start of Assistant 2s Answer]
{ai_response}
[The End of Assistant 2s Answer]
[System]
We would like to request your feedback on the performance of two AI assistants in response to the user question and audio description displayed above. AI assistants are provided with detailed audio descriptions and questions.
Please rate the helpfulness, relevance, accuracy, and comprehensiveness of their responses. Each assistant receives an overall score on a scale of 1 to 10, where a higher score indicates better overall performance. Please output a single line containing only two values indicating the scores for Assistant 1 and 2, respectively. The two scores are separated by a space.)tpl"},
    {"ssum_overall",
     R"tpl()tpl",
     R"tpl(You are a skilled evaluator for summaries generated based on user-provided instructions. A prominent organization has enlisted your help to assess the overall quality of a summary by focusing on how effectively it adheres to the user's specific instructions. Rate the summary on a scale of 1 to 7 based on the following criteria:

1. If the summary fulfills the user's instructions comprehensively, accurately captures the required details, excludes any explicitly prohibited information, maintains the correct level of detail, adheres to the requested structure (e.g., bullet points, paragraphs), and is both fluent and coherent, assign a score of 7. The summary should read naturally, resembling a human-written summary. Coherence means ideas are logical and well-connected, with smooth transitions.

2. If the summary mostly fulfills the user instructions but has minor issues, such as slight deviations in structure, missing small details, or minor readability issues, assign a score of 5-6, depending on the severity of the deviation. Consider whether the issues are easy to fix and whether they affect the summary's usability.

3. If the summary fulfills the majority of the instructions but includes unimportant or extra information, omits key details specified by the user, or diverges slightly in structure or emphasis, assign a score of 4-5, depending on the significance of the issues. Weigh the importance of missing or extraneous content against the clarity and adherence to instructions.

4. If the summary partially adheres to the instructions, capturing some of the requested details but introducing inconsistencies, hallucinations, or irrelevant content, assign a score of 2-4, depending on the extent of the deviations and errors. Penalize for any explicitly prohibited content that has been included.

5. If the summary minimally adheres to the instructions, misses most of the required details, includes significant irrelevant or hallucinated content, or ignores the specified structure or tone, assign a score of 1-3, depending on the severity of the shortcomings.

6. If the summary fails to follow the user's instructions altogether, missing all critical requirements or containing a high proportion of irrelevant or fabricated content, assign a score of 1. This includes summaries that fail to meet any formatting, detail, or exclusion criteria.

Here is the input document, user instruction and the corresponding summary.
Source:
```
{src}
```
User Instruction:
```
{instruction}
```
Summary
```
{tgt}
```
Note: It is helpful to read the summary first, before reading the source document. This will allow you to judge whether you understand the main contents of the source document through the summary alone. Afterward, you can assess to what extent the summary accurately reflects the source document.

Note: Based on the above criteria and assign a overall score of summary in the scale 1-7. If the summary is not provided for evaluation, return "N/A". Besides the score, you should also provide a **brief** explanation.

Note: Use the following json format for easy downstream consumption.

{{
    "explanation": "judge the summary based on the given criteria and explain your reasoning for the score you are going to give in the next field.",
    "score": THE_SCORE_VALUE
}})tpl"},
};

bool is_field_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

[[noreturn]] void fail_extract(std::string_view kind, std::string_view reply, const std::string& why) {
  throw ExtractionError("cannot extract a " + std::string(kind) + " score: " + why, std::string(reply));
}

double checked(double v, double lo, double hi, std::string_view kind, std::string_view reply) {
  if (!(v >= lo && v <= hi))
    fail_extract(kind, reply, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                                  std::to_string(hi) + "]");
  return v;
}

// Score field of the first JSON object in the reply, if any parses.
std::optional<nlohmann::json> json_score(std::string_view reply) {
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
  auto j = nlohmann::json::parse(reply.substr(open, close - open + 1), nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("score")) return std::nullopt;
  return j.at("score");
}

JudgeScore likert(std::string_view reply, std::string_view kind, double lo, double hi, bool allow_na) {
  JudgeScore s;
  auto na = [&] {
    if (!allow_na) fail_extract(kind, reply, "N/A is not a valid answer here");
    s.not_applicable = true;
    return s;
  };
  if (auto v = json_score(reply)) {
    if (v->is_number()) {
      s.score = checked(v->get<double>(), lo, hi, kind, reply);
      s.values = {*s.score};
      return s;
    }
    if (v->is_string()) {
      const std::string text = v->get<std::string>();
      if (text == "N/A") return na();
      try {
        std::size_t used = 0;
        const double d = std::stod(text, &used);
        if (used == text.size()) {
          s.score = checked(d, lo, hi, kind, reply);
          s.values = {*s.score};
          return s;
        }
      } catch (const std::exception&) {
      }
    }
  }
  static const std::regex loose(R"re("score"\s*:\s*"?(N/A|-?[0-9]+(?:\.[0-9]+)?))re");
  std::match_results<std::string_view::const_iterator> m;
  if (std::regex_search(reply.begin(), reply.end(), m, loose)) {
    if (m.str(1) == "N/A") return na();
    s.score = checked(std::stod(m.str(1)), lo, hi, kind, reply);
    s.values = {*s.score};
    return s;
  }
  if (reply.find("N/A") != std::string_view::npos) return na();
  fail_extract(kind, reply, "no score field");
}

}  // namespace

const std::vector<JudgeTemplate>& judge_templates() { return kTemplates; }

const JudgeTemplate& judge_template(std::string_view id) {
  for (const auto& t : kTemplates) {
    if (t.id == id) return t;
  }
  throw TemplateError("unknown judge template '" + std::string(id) + "'");
}

std::vector<std::string> template_fields(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '{' && i + 1 < text.size() && text[i + 1] == '{') {
      ++i;
      continue;
    }
    if (text[i] != '{') continue;
    std::size_t j = i + 1;
    while (j < text.size() && is_field_char(text[j])) ++j;
    if (j < text.size() && text[j] == '}' && j > i + 1) {
      std::string name(text.substr(i + 1, j - i - 1));
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
      i = j;
    }
  }
  return out;
}

JudgeRequest fill_judge_template(std::string_view id, const std::map<std::string, std::string>& fields) {
  const JudgeTemplate& t = judge_template(id);
  auto fill = [&](std::string_view text) {
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i) {
      const char c = text[i];
      if ((c == '{' || c == '}') && i + 1 < text.size() && text[i + 1] == c) {
        out += c;
        ++i;
        continue;
      }
      if (c == '{') {
        std::size_t j = i + 1;
        while (j < text.size() && is_field_char(text[j])) ++j;
        if (j < text.size() && text[j] == '}' && j > i + 1) {
          const std::string name(text.substr(i + 1, j - i - 1));
          auto it = fields.find(name);
          if (it == fields.end())
            throw TemplateError("judge template " + t.id + " needs field '" + name + "'");
          out += it->second;
          i = j;
          continue;
        }
      }
      out += c;
    }
    return out;
  };
  return {t.id, fill(t.system), fill(t.user)};
}

JudgeScore extract_scores(std::string_view reply, std::string_view kind) {
  if (kind.starts_with("mt_bench")) {
    static const std::regex rating(R"(\[\[([0-9]+(?:\.[0-9]+)?)\]\])");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(reply.begin(), reply.end(), m, rating)) fail_extract(kind, reply, "no [[rating]]");
    JudgeScore s;
    s.score = checked(std::stod(m.str(1)), 1, 10, kind, reply);
    s.values = {*s.score};
    return s;
  }
  if (kind == "airbench_chat") {
    static const std::regex pair(R"(^\s*([0-9]+(?:\.[0-9]+)?)[ \t,]+([0-9]+(?:\.[0-9]+)?)\s*$)");
    std::size_t start = 0;
    while (start <= reply.size()) {
      auto end = reply.find('\n', start);
      if (end == std::string_view::npos) end = reply.size();
      const std::string line(reply.substr(start, end - start));
      std::smatch m;
      if (std::regex_match(line, m, pair)) {
        JudgeScore s;
        s.values = {checked(std::stod(m.str(1)), 1, 10, kind, reply), checked(std::stod(m.str(2)), 1, 10, kind, reply)};
        s.score = s.values[1];
        return s;
      }
      start = end + 1;
    }
    fail_extract(kind, reply, "no line with two scores");
  }
  if (kind == "ssum_overall") return likert(reply, kind, 1, 7, true);
  if (kind == "ssum_adherence") return likert(reply, kind, 1, 7, false);
  if (kind == "ssum_hallucination") {
    JudgeScore s = likert(reply, kind, 0, 1, false);
    if (*s.score != 0.0 && *s.score != 1.0) fail_extract(kind, reply, "hallucination flag must be 0 or 1");
    return s;
  }
  throw TemplateError("unknown score kind '" + std::string(kind) + "'");
}

struct HttpTransport::Impl {
  std::string host;
  int port = 80;
  std::string path;
  std::string api_key;
  HttpJudgeOptions options;
  std::counting_semaphore<256> slots{1};
  std::mutex client_mutex;
};

HttpTransport::HttpTransport(const std::string& url, std::string api_key, HttpJudgeOptions options) {
  static const std::regex pattern(R"(^(https?)://([A-Za-z0-9.\-]+|\[[0-9A-Fa-f:]+\])(?::([0-9]{1,5}))?(/[^\s]*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, pattern)) throw ConfigError("malformed judge endpoint URL '" + url + "'");
  if (m.str(1) == "https") throw ConfigError("this build speaks plain http only: '" + url + "'");
  const int port = m[3].matched ? std::stoi(m.str(3)) : 80;
  if (port <= 0 || port > 65535) throw ConfigError("judge endpoint port out of range in '" + url + "'");
  if (options.max_in_flight == 0 || options.max_in_flight > 256) throw ConfigError("max_in_flight must be in 1..256");
  impl_ = std::make_unique<Impl>();
  impl_->host = m.str(2);
  impl_->port = port;
  impl_->path = m[4].matched ? m.str(4) : "/";
  impl_->api_key = std::move(api_key);
  impl_->options = options;
  for (std::size_t i = 1; i < options.max_in_flight; ++i) impl_->slots.release();
}

HttpTransport::~HttpTransport() = default;

std::string HttpTransport::complete(const JudgeRequest& request) {
  nlohmann::json body = {{"prompt", request.prompt}};
  if (!request.system.empty()) body["system"] = request.system;
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!impl_->api_key.empty()) headers.emplace("Authorization", "Bearer " + impl_->api_key);

  impl_->slots.acquire();
  struct Release {
    std::counting_semaphore<256>& s;
    ~Release() { s.release(); }
  } release{impl_->slots};

  std::string last_error;
  auto backoff = impl_->options.backoff;
  for (std::size_t attempt = 0; attempt <= impl_->options.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    httplib::Client client(impl_->host, impl_->port);
    client.set_connection_timeout(impl_->options.timeout);
    client.set_read_timeout(impl_->options.timeout);
    auto res = client.Post(impl_->path, headers, payload, "application/json");
    if (!res) {
      last_error = "connection failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) throw TransportError("judge endpoint returned HTTP " + std::to_string(res->status));
    auto reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.is_object() || !reply.contains("text") || !reply.at("text").is_string())
      throw TransportError("judge reply is not {\"text\": string}");
    return reply.at("text").get<std::string>();
  }
  throw TransportError("judge endpoint failed after " + std::to_string(impl_->options.max_retries) +
                       " retries: " + last_error);
}

std::unique_ptr<JudgeTransport> transport_from_env() {
  const char* url = std::getenv("MMLORA_JUDGE_URL");
  if (url == nullptr || *url == '\0') return nullptr;
  const char* key = std::getenv("MMLORA_JUDGE_KEY");
  return std::make_unique<HttpTransport>(url, key ? key : "");
}

CachedTransport::CachedTransport(JudgeTransport& inner, std::filesystem::path cache_file)
    : inner_(inner), file_(std::move(cache_file)) {
  if (file_.empty() || !std::filesystem::exists(file_)) return;
  std::ifstream in(file_);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DataError("judge cache " + file_.string() + " is not a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (v.is_string()) replies_[k] = v.get<std::string>();
  }
}

std::string CachedTransport::key_of(const JudgeRequest& r) {
  return r.template_id + ":" + fingerprint_hex(fnv1a(r.prompt, fnv1a(r.system + '\x1e')));
}

std::string CachedTransport::complete(const JudgeRequest& request) {
  const std::string key = key_of(request);
  {
    std::shared_lock lock(mutex_);
    if (auto it = replies_.find(key); it != replies_.end()) return it->second;
  }
  std::string reply = inner_.complete(request);
  std::unique_lock lock(mutex_);
  return replies_.emplace(key, std::move(reply)).first->second;
}

void CachedTransport::save() const {
  if (file_.empty()) return;
  std::shared_lock lock(mutex_);
  std::ofstream(file_) << nlohmann::json(replies_).dump(2) << '\n';
}

std::size_t CachedTransport::size() const {
  std::shared_lock lock(mutex_);
  return replies_.size();
}

}  // namespace mmlora
