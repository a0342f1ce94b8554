// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmlora/eval/judge.hpp"
#include "mmlora/eval/metrics.hpp"

namespace mmlora {

enum class EvalTask { kAsr, kAst, kSqqa, kSsum, kAu };

/// "asr", "ast", "sqqa", "ssum", "au" in any case. ConfigError otherwise.
EvalTask parse_eval_task(std::string_view name);
const char* eval_task_name(EvalTask task);

struct JudgeSpec {
  std::string template_id;  // empty when the reply is supplied as-is
  std::string kind;         // score kind, defaults to the template id
  std::map<std::string, std::string> fields;
  std::optional<std::string> reply;
};

struct EvalItem {
  std::string id;
  std::string dataset;
  std::string lang;
  std::optional<std::string> direction;  // "X-EN" style, AST only
  std::string subcategory;
  std::vector<std::string> references;
  std::optional<std::string> hypothesis;
  std::optional<double> score;       // precomputed item score
  std::optional<std::string> answer;  // choice letter for multiple choice
  std::optional<JudgeSpec> judge;
  std::optional<std::string> audio;
  std::vector<std::string> images;
};

struct EvalManifest {
  EvalTask task = EvalTask::kAsr;
  std::string dataset;
  std::vector<EvalItem> items;

  /// Ids unique, AST items carry a direction. Throws DataError.
  void validate() const;
};

EvalItem eval_item_from_json(const nlohmann::json& j);
/// One JSON object per line. Items naming a different task are rejected.
EvalManifest load_manifest(const std::filesystem::path& jsonl, EvalTask task);

struct ItemScore {
  std::string id;
  std::string group;
  std::optional<double> value;
  std::optional<EditStats> edits;
  bool not_applicable = false;
  bool separator_missing = false;
  std::string detail;  // extracted translation, parsed choice and so on
};

struct GroupScore {
  std::string name;
  std::string metric;
  double value = 0.0;
  std::size_t items = 0;
  std::size_t excluded = 0;
};

struct ScoreReport {
  EvalTask task = EvalTask::kAsr;
  std::string dataset;
  std::vector<ItemScore> items;
  std::vector<GroupScore> groups;
  double overall = 0.0;
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Groups items in first-appearance order. A group's value is the corpus
/// rate x100 when its items carry edit counts, the value in
/// corpus_values when one is given for it, and the mean of item values
/// otherwise. Items without a value are excluded and counted. The overall
/// score is the unweighted mean of the groups. Throws UndefinedMetricError
/// when nothing is scorable.
ScoreReport aggregate(const std::vector<ItemScore>& items, EvalTask task,
                      const std::map<std::string, double>& corpus_values = {},
                      const std::map<std::string, std::string>& metrics = {});

/// Reads the leading choice letter of a multiple-choice answer, if any.
std::optional<char> choice_letter(std::string_view text);

/// Scores every item and aggregates. Judge items without a stored reply
/// need a transport; TemplateError otherwise.
ScoreReport evaluate(const EvalManifest& manifest, JudgeTransport* judge = nullptr);

}  // namespace mmlora
