// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

// Central finite-difference oracle shared by the unit and acceptance suites.
// It only evaluates the forward function; it never looks at analytic
// gradients other than the ones it compares against.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mmlora/numerics/ops.hpp"
#include "mmlora/numerics/rng.hpp"

namespace mmlora::testing {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

inline Tensor random_tensor(Shape shape, SplitMix64& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Reduces any output to a scalar with a fixed random projection so every
/// output element influences the checked gradient.
inline Fn projected(Fn f, std::uint64_t seed) {
  return [f, seed](const std::vector<Tensor>& in) {
    Tensor out = f(in);
    SplitMix64 rng(seed);
    Tensor w = random_tensor(out.shape(), rng, 1.0, false);
    return ops::sum(ops::mul(out, w));
  };
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline double scalar_of(const Fn& f, const std::vector<Tensor>& inputs) {
  std::vector<Tensor> detached;
  for (const auto& t : inputs) detached.push_back(t.clone(false));
  return f(detached).item();
}

/// Relative error per input: ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-10).
inline GradCheckResult grad_check(const Fn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  Tensor out = f(inputs);
  out.backward();

  GradCheckResult res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto analytic = inputs[i].grad();
    std::vector<double> numeric(analytic.size());
    std::vector<Tensor> probe;
    for (const auto& t : inputs) probe.push_back(t.clone(false));
    for (std::size_t j = 0; j < analytic.size(); ++j) {
      auto d = probe[i].mutable_data();
      const double orig = d[j];
      d[j] = orig + h;
      const double up = f(probe).item();
      d[j] = orig - h;
      const double down = f(probe).item();
      d[j] = orig;
      numeric[j] = (up - down) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t j = 0; j < analytic.size(); ++j) {
      diff += (analytic[j] - numeric[j]) * (analytic[j] - numeric[j]);
      na += analytic[j] * analytic[j];
      nn += numeric[j] * numeric[j];
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-10});
    res.max_rel_error = std::max(res.max_rel_error, rel);
    res.checked += analytic.size();
  }
  return res;
}

}  // namespace mmlora::testing
