// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/lora/adapter.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mmlora/errors.hpp"

namespace mmlora {

LoraAdapter LoraAdapter::create(std::string name, std::size_t rank, const Decoder& model,
                                std::vector<std::string> attach_points, std::uint64_t seed,
                                std::optional<double> alpha) {
  if (rank == 0) throw ConfigError("LoRA rank must be >= 1");
  if (attach_points.empty()) throw ConfigError("adapter '" + name + "' has no attach points");
  LoraAdapter ad;
  ad.name_ = std::move(name);
  ad.rank_ = rank;
  ad.alpha_ = alpha.value_or(static_cast<double>(rank));
  SplitMix64 rng(seed);
  for (const auto& path : attach_points) {
    const Linear* layer = model.find_linear(path);
    if (!layer) throw ConfigError("unknown attach point '" + path + "' for adapter '" + ad.name_ + "'");
    if (ad.pairs_.contains(path)) throw ConfigError("duplicate attach point '" + path + "'");
    const std::size_t in = layer->in_features(), out = layer->out_features();
    LoraPair p;
    p.a = normal_tensor({rank, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    p.b = Tensor::zeros({out, rank});
    ad.pairs_.emplace(path, std::move(p));
  }
  ad.attach_points_ = std::move(attach_points);
  return ad;
}

const LoraPair* LoraAdapter::pair(std::string_view path) const {
  auto it = pairs_.find(path);
  return it == pairs_.end() ? nullptr : &it->second;
}

LoraPair* LoraAdapter::pair_mut(std::string_view path) {
  auto it = pairs_.find(path);
  return it == pairs_.end() ? nullptr : &it->second;
}

std::optional<Tensor> LoraAdapter::delta(std::string_view path, const Tensor& x) const {
  const LoraPair* p = pair(path);
  if (!p) return std::nullopt;
  return ops::scale(ops::matmul_nt(ops::matmul_nt(x, p->a), p->b), scaling());
}

ParamList LoraAdapter::trainable_parameters() const {
  ParamList out;
  for (const auto& path : attach_points_) {
    const auto& p = pairs_.at(path);
    out.push_back({path + ".lora_a", p.a});
    out.push_back({path + ".lora_b", p.b});
  }
  return out;
}

std::size_t LoraAdapter::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : trainable_parameters()) n += p.tensor.numel();
  return n;
}

void LoraAdapter::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest{{"name", name_}, {"rank", rank_}, {"alpha", alpha_}, {"attach_points", attach_points_}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  const auto params = trainable_parameters();
  save_tensors(dir / "weights.p4tz", params);
}

LoraAdapter LoraAdapter::load(const std::filesystem::path& dir, const Decoder& model) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw DataError("missing adapter manifest in " + dir.string());
  nlohmann::json m;
  try {
    is >> m;
    auto ad = create(m.at("name").get<std::string>(), m.at("rank").get<std::size_t>(), model,
                     m.at("attach_points").get<std::vector<std::string>>(), 0, m.at("alpha").get<double>());
    assign_params(ad.trainable_parameters(), load_tensors(dir / "weights.p4tz"));
    return ad;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad adapter manifest: ") + e.what());
  }
}

std::vector<std::string> vision_attach_points(const Decoder& model) {
  std::vector<std::string> out;
  for (const auto& s : model.linear_sites()) out.push_back(s.path);
  return out;
}

std::vector<std::string> audio_attach_points(const Decoder& model) {
  std::vector<std::string> out;
  for (const auto& s : model.linear_sites()) {
    if (s.path.find(".attn.") != std::string::npos || s.path.find(".mlp.") != std::string::npos) {
      out.push_back(s.path);
    }
  }
  return out;
}

std::size_t lora_parameter_count(const DecoderConfig& config, std::size_t rank) {
  std::size_t n = 0;
  for (const auto& s : site_shapes(config)) n += rank * (s.in + s.out);
  return n;
}

std::optional<Tensor> ActiveAdapters::delta(std::string_view path, const Tensor& x) const {
  std::optional<Tensor> total;
  for (const LoraAdapter* a : adapters_) {
    auto d = a->delta(path, x);
    if (!d) continue;
    total = total ? ops::add(*total, *d) : *d;
  }
  return total;
}

void AdapterBank::attach(LoraAdapter adapter, const Decoder& model) {
  for (const auto& path : adapter.attach_points()) {
    const Linear* layer = model.find_linear(path);
    if (!layer) throw ConfigError("unknown attach point '" + path + "'");
    const LoraPair* p = adapter.pair(path);
    if (p->a.dim(1) != layer->in_features() || p->b.dim(0) != layer->out_features()) {
      throw ConfigError("adapter '" + adapter.name() + "' does not fit layer '" + path + "'");
    }
  }
  const std::string name = adapter.name();
  if (!adapters_.emplace(name, std::move(adapter)).second) {
    throw ConfigError("adapter '" + name + "' is already attached");
  }
}

const LoraAdapter& AdapterBank::get(const std::string& name) const {
  auto it = adapters_.find(name);
  if (it == adapters_.end()) throw ConfigError("no adapter named '" + name + "'");
  return it->second;
}

LoraAdapter& AdapterBank::get_mut(const std::string& name) {
  auto it = adapters_.find(name);
  if (it == adapters_.end()) throw ConfigError("no adapter named '" + name + "'");
  return it->second;
}

std::vector<std::string> AdapterBank::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : adapters_) out.push_back(n);
  return out;
}

ActiveAdapters AdapterBank::activate(const std::vector<std::string>& names) const {
  std::vector<const LoraAdapter*> active;
  for (const auto& n : names) {
    auto it = adapters_.find(n);
    if (it != adapters_.end()) active.push_back(&it->second);
  }
  return ActiveAdapters(std::move(active));
}

namespace {

Decoder merge_signed(const LoraAdapter& adapter, const Decoder& model, double sign) {
  Decoder merged = model.clone();
  for (const auto& path : adapter.attach_points()) {
    Linear* layer = merged.find_linear_mut(path);
    if (!layer) throw ConfigError("unknown attach point '" + path + "'");
    const LoraPair* p = adapter.pair(path);
    // B [out, r] x A [r, in] -> [out, in]
    Tensor ba = ops::matmul(p->b.detach(), p->a.detach());
    auto w = layer->weight.mutable_data();
    const double s = sign * adapter.scaling();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += s * ba.data()[i];
  }
  return merged;
}

}  // namespace

Decoder merge(const LoraAdapter& adapter, const Decoder& model) { return merge_signed(adapter, model, 1.0); }

Decoder unmerge(const LoraAdapter& adapter, const Decoder& model) { return merge_signed(adapter, model, -1.0); }

}  // namespace mmlora
