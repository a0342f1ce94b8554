// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/eval/report.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <regex>
#include <set>
#include <sstream>

#include "mmlora/errors.hpp"
#include "mmlora/eval/bleu.hpp"

namespace mmlora {
namespace {

constexpr const char* kTokenizerNote =
    "BLEU tokenizers: 13a, or per-character for ja/zh targets in place of morphological segmentation";

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string or_default(const std::string& s, const std::string& fallback) { return s.empty() ? fallback : s; }

std::string target_lang(const EvalItem& item) {
  if (item.direction) {
    const auto dash = item.direction->rfind('-');
    if (dash != std::string::npos) return lower(item.direction->substr(dash + 1));
  }
  return lower(item.lang);
}

std::string group_of(const EvalItem& item, EvalTask task) {
  if (!item.subcategory.empty()) return item.subcategory;
  switch (task) {
    case EvalTask::kAsr:
      return or_default(item.lang, item.dataset);
    case EvalTask::kAst:
      return *item.direction;
    case EvalTask::kSqqa:
      if (item.judge && item.judge->template_id.starts_with("mt_bench_turn1")) return "turn1";
      if (item.judge && item.judge->template_id.starts_with("mt_bench_turn2")) return "turn2";
      return item.dataset;
    default:
      return item.dataset;
  }
}

template <typename T>
std::optional<T> opt_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

EvalTask parse_eval_task(std::string_view name) {
  const std::string n = lower(name);
  if (n == "asr") return EvalTask::kAsr;
  if (n == "ast") return EvalTask::kAst;
  if (n == "sqqa") return EvalTask::kSqqa;
  if (n == "ssum") return EvalTask::kSsum;
  if (n == "au") return EvalTask::kAu;
  throw ConfigError("unknown eval task '" + std::string(name) + "' (expected asr, ast, sqqa, ssum or au)");
}

const char* eval_task_name(EvalTask task) {
  switch (task) {
    case EvalTask::kAsr: return "ASR";
    case EvalTask::kAst: return "AST";
    case EvalTask::kSqqa: return "SQQA";
    case EvalTask::kSsum: return "SSUM";
    case EvalTask::kAu: return "AU";
  }
  return "?";
}

void EvalManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& item : items) {
    if (item.id.empty()) throw DataError("manifest item without an id");
    if (!seen.insert(item.id).second) throw DataError("duplicate manifest id '" + item.id + "'");
    if (task == EvalTask::kAst) {
      static const std::regex direction(R"(^[A-Za-z]+(?:_[A-Za-z]+)?-[A-Za-z]+(?:_[A-Za-z]+)?$)");
      if (!item.direction) throw DataError("AST item '" + item.id + "' has no direction");
      if (!std::regex_match(*item.direction, direction))
        throw DataError("AST item '" + item.id + "' has malformed direction '" + *item.direction + "'");
    }
  }
}

EvalItem eval_item_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("manifest line is not a JSON object");
  try {
    EvalItem item;
    item.id = j.at("id").get<std::string>();
    item.dataset = j.value("dataset", "");
    item.lang = j.value("lang", "");
    item.direction = opt_field<std::string>(j, "direction");
    item.subcategory = j.value("subcategory", "");
    if (j.contains("reference")) item.references.push_back(j.at("reference").get<std::string>());
    if (j.contains("references"))
      for (const auto& r : j.at("references")) item.references.push_back(r.get<std::string>());
    item.hypothesis = opt_field<std::string>(j, "hypothesis");
    item.score = opt_field<double>(j, "score");
    item.answer = opt_field<std::string>(j, "answer");
    item.audio = opt_field<std::string>(j, "audio");
    if (j.contains("images"))
      for (const auto& r : j.at("images")) item.images.push_back(r.get<std::string>());
    if (j.contains("judge")) {
      const auto& jj = j.at("judge");
      JudgeSpec spec;
      spec.template_id = jj.value("template", "");
      spec.kind = jj.value("kind", spec.template_id);
      if (jj.contains("fields"))
        for (const auto& [k, v] : jj.at("fields").items()) spec.fields[k] = v.get<std::string>();
      spec.reply = opt_field<std::string>(jj, "reply");
      if (spec.kind.empty()) throw DataError("judge entry of '" + item.id + "' names neither template nor kind");
      item.judge = std::move(spec);
    }
    return item;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest item: ") + e.what());
  }
}

EvalManifest load_manifest(const std::filesystem::path& jsonl, EvalTask task) {
  std::ifstream in(jsonl);
  if (!in) throw DataError("cannot open manifest " + jsonl.string());
  EvalManifest m;
  m.task = task;
  m.dataset = jsonl.stem().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto where = jsonl.string() + ":" + std::to_string(lineno);
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError(where + ": not valid JSON");
    if (j.contains("task") && j.at("task").is_string()) {
      EvalTask t;
      try {
        t = parse_eval_task(j.at("task").get<std::string>());
      } catch (const ConfigError& e) {
        throw DataError(where + ": " + e.what());
      }
      if (t != task)
        throw DataError(where + ": item task " + eval_task_name(t) + " in a " + eval_task_name(task) + " manifest");
    }
    try {
      m.items.push_back(eval_item_from_json(j));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (m.items.back().dataset.empty()) m.items.back().dataset = m.dataset;
  }
  if (m.items.empty()) throw DataError("manifest " + jsonl.string() + " has no items");
  m.validate();
  return m;
}

std::optional<char> choice_letter(std::string_view text) {
  static const std::regex leading(R"(^\s*\(?([A-Za-z])(?:[\).:]|\s|$))");
  static const std::regex stated(R"([Aa]nswer(?: is)?\s*:?\s*\(?([A-Za-z])(?:[\).:]|\s|$))");
  const std::string s(text);
  std::smatch m;
  if (std::regex_search(s, m, leading) || std::regex_search(s, m, stated))
    return static_cast<char>(std::toupper(static_cast<unsigned char>(m.str(1)[0])));
  return std::nullopt;
}

ScoreReport aggregate(const std::vector<ItemScore>& items, EvalTask task,
                      const std::map<std::string, double>& corpus_values,
                      const std::map<std::string, std::string>& metrics) {
  if (items.empty()) throw UndefinedMetricError("nothing to aggregate");
  ScoreReport r;
  r.task = task;
  r.items = items;
  r.notes.push_back(kTokenizerNote);

  std::vector<std::string> order;
  std::map<std::string, std::vector<const ItemScore*>> members;
  for (const auto& it : items) {
    if (!members.contains(it.group)) order.push_back(it.group);
    members[it.group].push_back(&it);
  }

  std::size_t not_applicable = 0;
  for (const auto& name : order) {
    const auto& group = members[name];
    GroupScore g;
    g.name = name;
    g.items = group.size();
    if (auto m = metrics.find(name); m != metrics.end()) g.metric = m->second;
    const bool has_edits = std::any_of(group.begin(), group.end(), [](auto* s) { return s->edits.has_value(); });
    if (auto c = corpus_values.find(name); c != corpus_values.end()) {
      g.value = c->second;
    } else if (has_edits) {
      std::size_t edits = 0, length = 0;
      for (const auto* s : group) {
        if (!s->edits) throw DataError("group '" + name + "' mixes edit counts with precomputed scores");
        edits += s->edits->edits;
        length += s->edits->ref_length;
      }
      g.value = 100.0 * static_cast<double>(edits) / static_cast<double>(length);
    } else {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto* s : group) {
        if (s->value) {
          sum += *s->value;
          ++n;
        } else {
          ++g.excluded;
          if (s->not_applicable) ++not_applicable;
        }
      }
      if (n == 0) {
        r.notes.push_back("group '" + name + "' has no scorable items and is left out of the average");
        r.groups.push_back(g);
        continue;
      }
      g.value = sum / static_cast<double>(n);
    }
    r.groups.push_back(g);
  }

  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& g : r.groups) {
    if (g.excluded == g.items && g.items > 0 && !corpus_values.contains(g.name)) continue;
    sum += g.value;
    ++n;
  }
  if (n == 0) throw UndefinedMetricError("no group has a scorable item");
  r.overall = sum / static_cast<double>(n);
  if (not_applicable > 0)
    r.notes.push_back(std::to_string(not_applicable) + " N/A judge replies excluded from the averages");
  return r;
}

ScoreReport evaluate(const EvalManifest& manifest, JudgeTransport* judge) {
  manifest.validate();
  std::vector<ItemScore> scores;
  std::map<std::string, std::string> metrics;
  std::map<std::string, std::vector<std::string>> ast_hyps, ast_refs;
  std::map<std::string, BleuTokenizer> ast_tok;
  std::set<std::string> precomputed_groups;
  std::size_t missing_sep = 0;

  for (const auto& item : manifest.items) {
    ItemScore s;
    s.id = item.id;
    s.group = group_of(item, manifest.task);
    std::string metric;
    if (item.score) {
      s.value = item.score;
      metric = manifest.task == EvalTask::kAsr ? (uses_cer(item.lang) ? "CER" : "WER")
               : manifest.task == EvalTask::kAst ? "BLEU"
                                                 : "score";
      precomputed_groups.insert(s.group);
    } else if (item.answer) {
      if (!item.hypothesis) throw DataError("item '" + item.id + "' has an answer key but no hypothesis");
      const auto got = choice_letter(*item.hypothesis);
      const char want = static_cast<char>(std::toupper(static_cast<unsigned char>(item.answer->at(0))));
      s.value = got && *got == want ? 100.0 : 0.0;
      s.detail = got ? std::string(1, *got) : "";
      metric = "accuracy";
    } else if (item.judge) {
      std::string reply;
      if (item.judge->reply) {
        reply = *item.judge->reply;
      } else {
        if (item.judge->template_id.empty())
          throw DataError("judge item '" + item.id + "' has neither a template nor a reply");
        if (judge == nullptr) throw TemplateError("judge item '" + item.id + "' needs a judge transport");
        reply = judge->complete(fill_judge_template(item.judge->template_id, item.judge->fields));
      }
      const JudgeScore js = extract_scores(reply, item.judge->kind);
      s.value = js.score;
      s.not_applicable = js.not_applicable;
      metric = "score";
    } else if (manifest.task == EvalTask::kAsr) {
      if (!item.hypothesis || item.references.empty())
        throw DataError("ASR item '" + item.id + "' needs a hypothesis and a reference");
      s.edits = error_edits(*item.hypothesis, item.references.front(), item.lang);
      metric = uses_cer(item.lang) ? "CER" : "WER";
    } else if (manifest.task == EvalTask::kAst) {
      if (!item.hypothesis || item.references.size() != 1)
        throw DataError("AST item '" + item.id + "' needs a hypothesis and exactly one reference");
      const CotSplit split = cot_split(*item.hypothesis);
      s.detail = split.translation;
      s.separator_missing = !split.separator_found;
      if (s.separator_missing) ++missing_sep;
      ast_hyps[s.group].push_back(split.translation);
      ast_refs[s.group].push_back(item.references.front());
      const BleuTokenizer tok = bleu_tokenizer_for(target_lang(item));
      if (auto [it, fresh] = ast_tok.emplace(s.group, tok); !fresh && it->second != tok)
        throw DataError("direction '" + s.group + "' mixes target languages");
      metric = std::string("BLEU (") + bleu_tokenizer_name(tok) + ")";
    } else {
      throw DataError("item '" + item.id + "' has no score, answer key or judge entry");
    }
    if (auto [it, fresh] = metrics.emplace(s.group, metric); !fresh && it->second != metric)
      throw DataError("group '" + s.group + "' mixes " + it->second + " and " + metric);
    scores.push_back(std::move(s));
  }

  std::map<std::string, double> corpus;
  for (const auto& [group, hyps] : ast_hyps) {
    if (precomputed_groups.contains(group))
      throw DataError("direction '" + group + "' mixes precomputed scores with hypotheses");
    corpus[group] = corpus_bleu(hyps, ast_refs[group], ast_tok[group]).score;
  }

  ScoreReport r = aggregate(scores, manifest.task, corpus, metrics);
  r.dataset = manifest.dataset;
  if (missing_sep > 0)
    r.notes.push_back(std::to_string(missing_sep) + " outputs had no <sep>; the whole output was scored");
  return r;
}

nlohmann::json ScoreReport::to_json() const {
  nlohmann::json j;
  j["task"] = eval_task_name(task);
  j["dataset"] = dataset;
  j["notes"] = notes;
  j["overall"] = overall;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : groups)
    j["groups"].push_back(
        {{"name", g.name}, {"metric", g.metric}, {"value", g.value}, {"items", g.items}, {"excluded", g.excluded}});
  j["items"] = nlohmann::json::array();
  for (const auto& s : items) {
    nlohmann::json it = {{"id", s.id}, {"group", s.group}};
    it["value"] = s.value ? nlohmann::json(*s.value) : nlohmann::json(nullptr);
    if (s.edits) {
      it["edits"] = s.edits->edits;
      it["ref_length"] = s.edits->ref_length;
    }
    if (s.not_applicable) it["not_applicable"] = true;
    if (s.separator_missing) it["separator_missing"] = true;
    if (!s.detail.empty()) it["detail"] = s.detail;
    j["items"].push_back(std::move(it));
  }
  return j;
}

std::string ScoreReport::to_table() const {
  std::size_t name_w = std::string_view("Average").size(), metric_w = std::string_view("Metric").size();
  for (const auto& g : groups) {
    name_w = std::max(name_w, g.name.size());
    metric_w = std::max(metric_w, g.metric.size());
  }
  std::ostringstream os;
  os << eval_task_name(task) << (dataset.empty() ? "" : " " + dataset) << '\n';
  for (const auto& n : notes) os << "# " << n << '\n';
  auto row = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d) {
    os << std::left << std::setw(static_cast<int>(name_w)) << a << "  " << std::setw(static_cast<int>(metric_w)) << b
       << "  " << std::right << std::setw(8) << c << "  " << std::setw(5) << d << '\n';
  };
  auto fmt = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v;
    return s.str();
  };
  row("Group", "Metric", "Score", "Items");
  for (const auto& g : groups) row(g.name, g.metric, g.excluded == g.items ? "-" : fmt(g.value), std::to_string(g.items));
  row("Average", "", fmt(overall), std::to_string(items.size()));
  return os.str();
}

}  // namespace mmlora
