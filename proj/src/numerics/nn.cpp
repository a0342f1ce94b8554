// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmlora/numerics/nn.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mmlora/errors.hpp"

namespace mmlora {

Tensor normal_tensor(Shape shape, double stddev, SplitMix64& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v));
}

Linear Linear::init(std::size_t in, std::size_t out, SplitMix64& rng, bool with_bias, double stddev) {
  if (stddev < 0.0) stddev = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = normal_tensor({out, in}, stddev, rng);
  if (with_bias) l.bias = Tensor::zeros({out});
  return l;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Linear Linear::clone() const {
  Linear l;
  l.weight = weight.clone(weight.requires_grad());
  if (bias.defined()) l.bias = bias.clone(bias.requires_grad());
  return l;
}

LayerNorm LayerNorm::init(std::size_t width) {
  return LayerNorm{Tensor::full({width}, 1.0), Tensor::zeros({width}), 1e-5};
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::clone() const {
  return LayerNorm{gain.clone(gain.requires_grad()), bias.clone(bias.requires_grad()), eps};
}

MlpProjector MlpProjector::init(std::size_t in, std::size_t hidden, std::size_t out, SplitMix64& rng) {
  return MlpProjector{Linear::init(in, hidden, rng), Linear::init(hidden, out, rng)};
}

Tensor MlpProjector::operator()(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != in_features()) {
    throw ConfigError("projector expects width " + std::to_string(in_features()) + ", got " + shape_str(x.shape()));
  }
  return fc2(ops::gelu(fc1(x)));
}

void MlpProjector::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

void assign_params(const ParamList& dest, const std::vector<NamedTensor>& source) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& s : source) by_name[s.name] = &s.tensor;
  for (const auto& d : dest) {
    auto it = by_name.find(d.name);
    if (it == by_name.end()) throw DataError("checkpoint is missing tensor '" + d.name + "'");
    if (it->second->shape() != d.tensor.shape()) {
      throw DataError("checkpoint tensor '" + d.name + "' has shape " + shape_str(it->second->shape()) +
                      ", expected " + shape_str(d.tensor.shape()));
    }
    Tensor target = d.tensor;
    std::copy(it->second->data().begin(), it->second->data().end(), target.mutable_data().begin());
  }
}

void set_requires_grad(const ParamList& params, bool flag) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(flag);
    if (!flag) t.zero_grad();
  }
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

}  // namespace mmlora
