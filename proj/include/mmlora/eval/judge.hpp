// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace mmlora {

struct JudgeTemplate {
  std::string id;
  std::string system;  // may be empty
  std::string user;
};

/// mt_bench_turn1, mt_bench_turn1_math, mt_bench_turn2, mt_bench_turn2_math,
/// airbench_chat, ssum_overall.
const std::vector<JudgeTemplate>& judge_templates();
/// Throws TemplateError for an unknown id.
const JudgeTemplate& judge_template(std::string_view id);
/// Field names a template expects, in first-use order.
std::vector<std::string> template_fields(std::string_view text);

struct JudgeRequest {
  std::string template_id;
  std::string system;
  std::string prompt;
};

/// Replaces every {field}; "{{" and "}}" become single braces. Throws
/// TemplateError when a field is missing.
JudgeRequest fill_judge_template(std::string_view id, const std::map<std::string, std::string>& fields);

struct JudgeScore {
  std::optional<double> score;   // nothing for "N/A"
  std::vector<double> values;    // every number the reply format carries
  bool not_applicable = false;
};

/// Score kinds: the MT-Bench ids read "[[n]]" (1..10); airbench_chat reads
/// two numbers and keeps the second; ssum_overall and ssum_adherence read a
/// JSON "score" (1..7, "N/A" allowed for the overall score);
/// ssum_hallucination reads a 0/1 flag. Throws ExtractionError carrying the
/// raw reply when nothing parses.
JudgeScore extract_scores(std::string_view reply, std::string_view kind);

class JudgeTransport {
 public:
  virtual ~JudgeTransport() = default;
  virtual std::string complete(const JudgeRequest& request) = 0;
};

/// Offline transport: a function of the request, or a fixed reply.
class StubTransport : public JudgeTransport {
 public:
  explicit StubTransport(std::function<std::string(const JudgeRequest&)> reply) : reply_(std::move(reply)) {}
  explicit StubTransport(std::string fixed)
      : reply_([fixed = std::move(fixed)](const JudgeRequest&) { return fixed; }) {}
  std::string complete(const JudgeRequest& request) override {
    ++calls_;
    return reply_(request);
  }
  std::size_t calls() const { return calls_; }

 private:
  std::function<std::string(const JudgeRequest&)> reply_;
  std::atomic<std::size_t> calls_ = 0;
};

struct HttpJudgeOptions {
  std::size_t max_retries = 3;
  std::chrono::milliseconds backoff{200};  // doubled per retry
  std::chrono::seconds timeout{60};
  std::size_t max_in_flight = 4;
};

/// POST {"prompt", "system"?} as JSON to an http:// URL and read {"text"}.
/// Connection failures, 429 and 5xx are retried with exponential backoff.
/// Throws ConfigError for a malformed URL and TransportError once retries
/// are exhausted or on a non-retryable status.
class HttpTransport : public JudgeTransport {
 public:
  HttpTransport(const std::string& url, std::string api_key = {}, HttpJudgeOptions options = {});
  ~HttpTransport() override;
  std::string complete(const JudgeRequest& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HttpTransport for MMLORA_JUDGE_URL (and MMLORA_JUDGE_KEY), or nothing
/// when the URL is unset.
std::unique_ptr<JudgeTransport> transport_from_env();

/// Memoises replies by (template id, prompt hash). Safe for concurrent use;
/// lookups share a lock, inserts take it exclusively.
class CachedTransport : public JudgeTransport {
 public:
  explicit CachedTransport(JudgeTransport& inner, std::filesystem::path cache_file = {});
  std::string complete(const JudgeRequest& request) override;
  void save() const;
  std::size_t size() const;

  static std::string key_of(const JudgeRequest& request);

 private:
  JudgeTransport& inner_;
  std::filesystem::path file_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::string> replies_;
};

}  // namespace mmlora
