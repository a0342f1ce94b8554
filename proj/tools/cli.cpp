// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmlora/audio/wav.hpp"
#include "mmlora/decoder/special_tokens.hpp"
#include "mmlora/errors.hpp"
#include "mmlora/eval/report.hpp"
#include "mmlora/numerics/serialize.hpp"
#include "mmlora/training/data.hpp"
#include "mmlora/training/stages.hpp"
#include "mmlora/vision/crops.hpp"

namespace mmlora::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::size_t kDefaultContext = 128000;

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

json fingerprint_json(const FingerprintTable& table) {
  json j = json::object();
  for (const auto& [group, fp] : table) j[group] = fingerprint_hex(fp);
  return j;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct TrainArgs {
  std::string stages = "all";
  double steps_scale = kDeskStepScale;
  std::string schedule;
  std::string data;
  std::string out;
  std::string model;
  std::uint64_t seed = 0;
  std::size_t batch_size = 1;
};

struct InferArgs {
  std::string model;
  std::string audio;
  std::vector<std::string> images;
  std::string prompt;
  std::size_t max_new = 32;
  std::size_t context = kDefaultContext;
  std::size_t max_crops = 16;
  std::uint64_t seed = 0;
  bool no_adapters = false;
  std::string out;
};

struct BudgetArgs {
  double audio_seconds = 0.0;
  std::size_t context = kDefaultContext;
  std::string image;
  std::size_t max_crops = 16;
  std::size_t crop = 448;
  std::string out;
};

struct EvalArgs {
  std::string task;
  std::string manifest;
  std::string out;
  std::string judge_cache;
};

std::pair<MultimodalModel, Tokenizer> load_or_init(const std::string& dir, std::uint64_t seed) {
  if (dir.empty()) {
    MultimodalConfig config;
    config.seed = seed;
    return {MultimodalModel(config), Tokenizer::toy()};
  }
  const fs::path tok = fs::path(dir) / "tokenizer.json";
  return {MultimodalModel::load(dir), fs::exists(tok) ? Tokenizer::load(tok) : Tokenizer::toy()};
}

bool is_audio_source(const std::string& source) { return source == "asr" || source == "speech_sft"; }

int cmd_train(const TrainArgs& a, std::ostream& out) {
  std::vector<StageSpec> schedule = standard_schedules(a.steps_scale);
  if (!a.schedule.empty()) {
    std::ifstream in(a.schedule);
    if (!in) throw ConfigError("cannot open schedule override " + a.schedule);
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("schedule override " + a.schedule + " is not valid JSON");
    schedule = apply_schedule_override(std::move(schedule), j);
  }
  std::vector<StageSpec> stages;
  if (a.stages == "all") {
    stages = schedule;
  } else {
    for (const auto& name : split_list(a.stages)) stages.push_back(find_stage(schedule, name));
    if (stages.empty()) throw ConfigError("--stages names no stage");
  }

  auto [model, tokenizer] = load_or_init(a.model, a.seed);
  std::optional<Dataset> given;
  if (!a.data.empty()) given = load_dataset(a.data);
  std::map<std::string, Dataset> synthetic;
  auto data_for = [&](const StageSpec& s) -> const Dataset& {
    if (given) return *given;
    const std::string kind = is_audio_source(s.data_source) ? "tones" : "images";
    if (!synthetic.contains(kind)) {
      if (kind == "tones") {
        ToneSpec spec;
        spec.seed = a.seed;
        synthetic.emplace(kind, synthetic_tone_dataset(spec));
      } else {
        ImageSpec spec;
        spec.seed = a.seed;
        synthetic.emplace(kind, synthetic_image_dataset(spec));
      }
    }
    return synthetic.at(kind);
  };

  const fs::path root(a.out);
  fs::create_directories(root / "reports");
  fs::create_directories(root / "fingerprints");
  const FingerprintTable initial = model.fingerprints();
  write_json(root / "fingerprints" / "initial.json", fingerprint_json(initial));

  json summary = {{"seed", a.seed}, {"steps_scale", a.steps_scale}, {"stages", json::array()}};
  RunOptions opts;
  opts.seed = a.seed;
  opts.batch_size = a.batch_size;
  const Dataset none{{}, PayloadStore{}};
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& stage = stages[i];
    const Dataset& data = stage.steps > 0 ? data_for(stage) : none;
    const StageReport report = run_stage(stage, model, data, tokenizer, opts);
    json j = report.to_json();
    j["stage_config"] = stage.to_json();
    const std::string stem = (i < 9 ? "0" : "") + std::to_string(i + 1) + "_" + stage.name;
    write_json(root / "reports" / (stem + ".json"), j);
    write_json(root / "fingerprints" / (stem + ".json"), fingerprint_json(report.after));
    summary["stages"].push_back({{"stage", stage.name}, {"steps", report.steps},
                                 {"final_loss", report.losses.empty() ? json(nullptr) : json(report.losses.back())}});

    std::vector<std::string> changed;
    for (const auto& [group, fp] : report.before)
      if (fp != report.after.at(group)) changed.push_back(group);
    out << "stage " << stage.name << ": " << report.steps << " steps";
    if (!report.losses.empty())
      out << ", loss " << fixed(report.losses.front(), 4) << " -> " << fixed(report.losses.back(), 4);
    out << ", updated [";
    for (std::size_t k = 0; k < changed.size(); ++k) out << (k ? ", " : "") << changed[k];
    out << "], frozen groups unchanged\n";
  }

  const FingerprintTable final_fp = model.fingerprints();
  if (final_fp.at(kGroupDecoder) != initial.at(kGroupDecoder))
    throw FrozenMutationError("decoder weights changed during training");
  summary["decoder_fingerprint"] = fingerprint_hex(final_fp.at(kGroupDecoder));
  model.save(root / "checkpoint");
  write_json(root / "checkpoint" / "tokenizer.json", tokenizer.to_json());
  write_json(root / "summary.json", summary);
  out << "decoder fingerprint " << fingerprint_hex(final_fp.at(kGroupDecoder)) << " (unchanged)\n";
  out << "checkpoint written to " << (root / "checkpoint").string() << '\n';
  return kOk;
}

int cmd_infer(const InferArgs& a, std::ostream& out) {
  if (!a.audio.empty()) {
    const WavHeader header = probe_wav(a.audio);
    const AudioBudget budget = audio_token_budget(header.duration_s(), a.context);
    if (!budget.fits)
      throw CapacityError("audio_token_budget: " + fixed(header.duration_s(), 1) + " s of audio needs " +
                          std::to_string(budget.tokens) + " tokens, more than the " + std::to_string(a.context) +
                          "-token context allows (at most " + fixed(max_audio_seconds(a.context) / 3600.0, 2) +
                          " hours)");
  }
  auto [model, tokenizer] = load_or_init(a.model, a.seed);
  SftSample sample;
  sample.task = "infer";
  sample.prompt = a.prompt;
  if (!a.audio.empty()) sample.audio = a.audio;
  sample.images = a.images;
  sample.label = "-";
  const PayloadStore payloads;
  const PreparedSample prepared = prepare_sample(sample, model, tokenizer, payloads, std::nullopt, a.max_crops);
  const std::vector<std::string> routed = ModalityRouter{}.route(prepared.modalities);
  const ActiveAdapters active = a.no_adapters ? ActiveAdapters{} : model.adapters.activate(routed);
  auto ids = model.decoder.generate_greedy(generation_prompt(prepared.rendered), prepared.spans, a.max_new,
                                           active.empty() ? nullptr : &active, tokens::kEnd);
  if (!ids.empty() && ids.back() == tokens::kEnd) ids.pop_back();
  const std::string text = tokenizer.decode(ids);
  const std::string adapters = format_adapter_list(a.no_adapters ? std::vector<std::string>{} : routed);
  out << "adapters: " << adapters << '\n';
  out << "output: " << text << '\n';
  if (!a.out.empty()) {
    write_json(fs::path(a.out) / "infer.json",
               {{"adapters", a.no_adapters ? std::vector<std::string>{} : routed}, {"output", text}, {"token_ids", ids}});
  }
  return kOk;
}

int cmd_budget(const BudgetArgs& a, std::ostream& out, bool audio_given) {
  json plan = json::object();
  if (audio_given) {
    const AudioBudget b = audio_token_budget(a.audio_seconds, a.context);
    const double max_s = max_audio_seconds(a.context);
    out << "audio " << a.audio_seconds << " s: " << b.frames << " frames, " << b.tokens << " tokens\n";
    out << "fits a " << a.context << "-token context: " << (b.fits ? "yes" : "no") << '\n';
    out << "longest clip for that context: " << fixed(max_s / 3600.0, 2) << " hours (" << fixed(max_s, 0) << " s)\n";
    plan["audio"] = {{"seconds", a.audio_seconds}, {"frames", b.frames}, {"tokens", b.tokens},
                     {"context", a.context},       {"fits", b.fits},     {"max_seconds", max_s}};
  }
  if (!a.image.empty()) {
    std::size_t w = 0, h = 0;
    char x = 0;
    std::istringstream in(a.image);
    if (!(in >> w >> x >> h) || (x != 'x' && x != 'X') || !in.eof() || w == 0 || h == 0)
      throw ConfigError("--image expects WIDTHxHEIGHT, got '" + a.image + "'");
    const CropPlan p = plan_crops(h, w, a.crop, a.max_crops);
    out << "image " << w << "x" << h << ": grid " << p.rows << "x" << p.cols << " (rows x cols), " << p.crops()
        << " crops of " << a.crop << " px, resized to " << p.resize_w << "x" << p.resize_h
        << (p.fallback_used ? ", aspect-ratio fallback" : "") << '\n';
    plan["image"] = {{"width", w},          {"height", h},           {"max_crops", a.max_crops},
                     {"rows", p.rows},      {"cols", p.cols},        {"crops", p.crops()},
                     {"resize_w", p.resize_w}, {"resize_h", p.resize_h}, {"fallback", p.fallback_used}};
  }
  if (plan.empty()) throw ConfigError("budget needs --audio-seconds or --image");
  if (!a.out.empty()) write_json(fs::path(a.out) / "budget.json", plan);
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const EvalTask task = parse_eval_task(a.task);
  const EvalManifest manifest = load_manifest(a.manifest, task);
  std::unique_ptr<JudgeTransport> http = transport_from_env();
  std::optional<CachedTransport> cache;
  if (http) cache.emplace(*http, a.judge_cache);
  const ScoreReport report = evaluate(manifest, cache ? &*cache : nullptr);
  if (cache) cache->save();

  fs::path json_path(a.out);
  if (json_path.extension() != ".json") json_path /= "report.json";
  write_json(json_path, report.to_json());
  fs::path table_path = json_path;
  table_path.replace_extension(".txt");
  std::ofstream(table_path) << report.to_table();
  out << report.to_table();
  out << "report written to " << json_path.string() << '\n';
  return kOk;
}

}  // namespace

std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].starts_with("--config=")) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("config " + path + " is not a JSON object");

  auto given = [&](const std::string& flag) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& s) { return s == flag || s.starts_with(flag + "="); });
  };
  auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  std::vector<std::string> extra;
  for (const auto& [key, value] : j.items()) {
    if (key == "command") {
      if (!value.is_string()) throw ConfigError("config 'command' must be a string");
      if (args.empty() || args.front().starts_with("-")) args.insert(args.begin(), value.get<std::string>());
      continue;
    }
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (flag == "--config" || given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) extra.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        extra.push_back(flag);
        extra.push_back(scalar(v));
      }
    } else if (!value.is_null()) {
      extra.push_back(flag);
      extra.push_back(scalar(value));
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal LoRA toolkit: staged training, inference, token budgets and evaluation", "mmlora"};
  app.require_subcommand(1);
  std::string config_file;

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run training stages in order and write reports and a checkpoint");
  t->add_option("--stages", train.stages, "Comma-separated stage names, or 'all'")->capture_default_str();
  t->add_option("--steps-scale", train.steps_scale, "Fraction of the nominal steps per stage")->capture_default_str();
  t->add_option("--schedule", train.schedule, "JSON schedule override");
  t->add_option("--data", train.data, "JSONL training samples (synthetic tones and images when absent)");
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--model", train.model, "Checkpoint directory to start from");
  t->add_option("--seed", train.seed)->capture_default_str();
  t->add_option("--batch-size", train.batch_size)->capture_default_str()->check(CLI::PositiveNumber);

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Greedy generation for a prompt with optional audio and images");
  i->add_option("--model", infer.model, "Checkpoint directory (a freshly initialised model when absent)");
  i->add_option("--audio", infer.audio, "16 kHz WAV file");
  i->add_option("--image", infer.images, "PNG or PPM image; repeatable");
  i->add_option("--prompt", infer.prompt)->required();
  i->add_option("--max-new", infer.max_new)->capture_default_str();
  i->add_option("--context", infer.context, "Context length for the audio budget check")->capture_default_str();
  i->add_option("--max-crops", infer.max_crops)->capture_default_str()->check(CLI::PositiveNumber);
  i->add_option("--seed", infer.seed)->capture_default_str();
  i->add_flag("--no-adapters", infer.no_adapters, "Run the base decoder only");
  i->add_option("--out", infer.out, "Directory for infer.json");

  BudgetArgs budget;
  auto* b = app.add_subcommand("budget", "Token budgets for audio durations and image sizes");
  auto* audio_opt = b->add_option("--audio-seconds", budget.audio_seconds);
  b->add_option("--context", budget.context)->capture_default_str();
  b->add_option("--image", budget.image, "WIDTHxHEIGHT");
  b->add_option("--max-crops", budget.max_crops)->capture_default_str()->check(CLI::PositiveNumber);
  b->add_option("--crop", budget.crop, "Crop side in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  b->add_option("--out", budget.out, "Directory for budget.json");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a manifest and write JSON and text reports");
  e->add_option("--task", eval.task, "asr, ast, sqqa, ssum or au")->required();
  e->add_option("--manifest", eval.manifest)->required()->check(CLI::ExistingFile);
  e->add_option("--out", eval.out, "Report path (.json) or directory")->required();
  e->add_option("--judge-cache", eval.judge_cache, "JSON file caching judge replies");

  for (auto* sub : {t, i, b, e}) sub->add_option("--config", config_file, "JSON file of flag values; flags win");

  try {
    args = merge_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "usage error: " << ex.what() << '\n';
    const auto subs = app.get_subcommands();
    err << "run with " << (subs.empty() ? "" : subs.front()->get_name() + " ") << "--help for usage\n";
    return kUsage;
  } catch (const ConfigError& ex) {
    err << "usage error: " << ex.what() << '\n';
    return kUsage;
  }

  try {
    if (t->parsed()) return cmd_train(train, out);
    if (i->parsed()) return cmd_infer(infer, out);
    if (b->parsed()) return cmd_budget(budget, out, audio_opt->count() > 0);
    return cmd_eval(eval, out);
  } catch (const ConfigError& ex) {
    err << "usage error: " << ex.what() << '\n';
    return kUsage;
  } catch (const FrozenMutationError& ex) {
    err << "invariant violation: " << ex.what() << '\n';
    return kInvariant;
  } catch (const CapacityError& ex) {
    err << "capacity error: " << ex.what() << '\n';
    return kData;
  } catch (const ExtractionError& ex) {
    err << "data error: " << ex.what() << "\nraw reply: " << ex.raw_reply() << '\n';
    return kData;
  } catch (const Error& ex) {
    err << "data error: " << ex.what() << '\n';
    return kData;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kFailure;
  }
}

}  // namespace mmlora::cli
