// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "mmlora/numerics/ops.hpp"
#include "mmlora/numerics/rng.hpp"
#include "mmlora/numerics/serialize.hpp"

namespace mmlora {

using ParamList = std::vector<NamedTensor>;

Tensor normal_tensor(Shape shape, double stddev, SplitMix64& rng);

/// Affine layer, weight stored [out, in].
struct Linear {
  Tensor weight;
  Tensor bias;  // may be undefined

  static Linear init(std::size_t in, std::size_t out, SplitMix64& rng, bool with_bias = true,
                     double stddev = -1.0);
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  Tensor operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }
  void collect(const std::string& prefix, ParamList& out) const;
  Linear clone() const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  static LayerNorm init(std::size_t width);
  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gain, bias, eps); }
  void collect(const std::string& prefix, ParamList& out) const;
  LayerNorm clone() const;
};

/// Two-layer projector: linear -> GELU -> linear.
struct MlpProjector {
  Linear fc1;
  Linear fc2;

  static MlpProjector init(std::size_t in, std::size_t hidden, std::size_t out, SplitMix64& rng);
  std::size_t in_features() const { return fc1.in_features(); }
  std::size_t out_features() const { return fc2.out_features(); }
  /// Throws ConfigError when x's width differs from in_features().
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Copies values from `source` into the identically named tensors of `dest`.
/// Throws DataError on a missing name or shape mismatch.
void assign_params(const ParamList& dest, const std::vector<NamedTensor>& source);

void set_requires_grad(const ParamList& params, bool flag);

std::vector<Tensor> tensors_of(const ParamList& params);

}  // namespace mmlora
