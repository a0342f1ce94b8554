// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/decoder/config.hpp"

#include <cmath>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "mmlora/decoder/special_tokens.hpp"
#include "mmlora/errors.hpp"

namespace mmlora {

namespace {
const std::set<std::string> kConfigKeys = {"d_model",    "n_layers",    "n_q_heads",  "n_kv_heads", "rotary_fraction",
                                           "vocab_size", "max_context", "mlp_hidden", "seed"};
}

std::size_t DecoderConfig::rotary_dims() const {
  return static_cast<std::size_t>(std::lround(rotary_fraction * static_cast<double>(head_dim())));
}

void DecoderConfig::validate() const {
  if (d_model == 0 || n_layers == 0 || n_q_heads == 0 || n_kv_heads == 0 || mlp_hidden == 0) {
    throw ConfigError("decoder extents must be positive");
  }
  if (n_q_heads % n_kv_heads != 0) {
    throw ConfigError("n_q_heads (" + std::to_string(n_q_heads) + ") must be a multiple of n_kv_heads (" +
                      std::to_string(n_kv_heads) + ")");
  }
  if (d_model % n_q_heads != 0) throw ConfigError("d_model must be divisible by n_q_heads");
  if (!(rotary_fraction >= 0.0 && rotary_fraction <= 1.0)) throw ConfigError("rotary_fraction must lie in [0, 1]");
  if (rotary_dims() % 2 != 0) {
    throw ConfigError("rotary dim count " + std::to_string(rotary_dims()) + " must be even");
  }
  if (vocab_size <= static_cast<std::size_t>(tokens::kNumSpecial)) throw ConfigError("vocab_size too small");
  if (max_context == 0) throw ConfigError("max_context must be positive");
}

DecoderConfig DecoderConfig::toy() { return DecoderConfig{}; }

DecoderConfig DecoderConfig::full_scale() {
  DecoderConfig c;
  c.d_model = 3072;
  c.n_layers = 32;
  c.n_q_heads = 24;
  c.n_kv_heads = 8;
  c.rotary_fraction = 0.75;
  c.vocab_size = 200064;
  c.max_context = 131072;
  c.mlp_hidden = 4 * 3072;
  return c;
}

nlohmann::json DecoderConfig::to_json() const {
  return {{"d_model", d_model},         {"n_layers", n_layers},     {"n_q_heads", n_q_heads},
          {"n_kv_heads", n_kv_heads},   {"rotary_fraction", rotary_fraction},
          {"vocab_size", vocab_size},   {"max_context", max_context}, {"mlp_hidden", mlp_hidden},
          {"seed", seed}};
}

DecoderConfig DecoderConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("decoder config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kConfigKeys.contains(key)) throw ConfigError("unknown decoder config key '" + key + "'");
  }
  for (const auto& key : kConfigKeys) {
    if (!j.contains(key)) throw ConfigError("decoder config is missing '" + key + "'");
  }
  DecoderConfig c;
  try {
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_q_heads = j.at("n_q_heads").get<std::size_t>();
    c.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
    c.rotary_fraction = j.at("rotary_fraction").get<double>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_context = j.at("max_context").get<std::size_t>();
    c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad decoder config: ") + e.what());
  }
  c.validate();
  return c;
}

double peak_lr(double b, double tokens) {
  if (!(b > 0.0) || !(tokens > 0.0)) throw DomainError("peak_lr requires B > 0 and D > 0");
  return b * std::pow(tokens, -0.32);
}

}  // namespace mmlora
