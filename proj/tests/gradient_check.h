// Copyright 2026 The dpsynth Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Central finite-difference check of per-example gradients, shared by the
// unit tests and the acceptance binary.

#ifndef DPSYNTH_TESTS_GRADIENT_CHECK_H_
#define DPSYNTH_TESTS_GRADIENT_CHECK_H_

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "dpsynth/corpus.h"
#include "dpsynth/language_model.h"
#include "dpsynth/rng.h"

namespace testing_oracles {

struct GradientCheck {
  int coordinates = 0;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  // Relative error without the floor, over coordinates with |gradient| >= 1e-6.
  double max_unfloored_relative_error = 0.0;
  double max_abs_gradient = 0.0;
};

// Errors below `abs_floor` count as exact; this guards coordinates whose
// gradient is itself at the level of finite-difference rounding.
inline double gradient_relative_error(double analytic, double numeric, double abs_floor = 1e-9) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs_floor) return 0.0;
  return diff / std::max(std::abs(analytic), std::abs(numeric));
}

// Loss of a single sequence through the plain forward pass.
inline double sequence_loss(const dpsynth::ModelParams& params, const dpsynth::TokenSequence& tokens,
                            const dpsynth::LossOptions& options) {
  const std::vector<dpsynth::TokenSequence> batch{tokens};
  return dpsynth::forward(params, batch, options).loss;
}

// Perturbs all parameters with N(0, scale) noise so that no block starts at a
// degenerate point (the output projection is zero at initialization).
inline void randomize(dpsynth::ModelParams& params, uint64_t seed, double scale = 0.3) {
  dpsynth::Rng rng(seed);
  for (double& v : params.values()) v += scale * rng.normal();
}

inline std::map<dpsynth::TensorClass, GradientCheck> check_gradients(
    dpsynth::ModelParams params, const dpsynth::TokenSequence& tokens, const dpsynth::LossOptions& options,
    int per_class, uint64_t seed, double h = 1e-5) {
  std::vector<double> grad(params.size());
  dpsynth::example_gradient(params, tokens, options, grad);

  std::map<dpsynth::TensorClass, std::vector<size_t>> pool;
  for (const auto& t : params.layout().tensors()) {
    for (size_t i = 0; i < t.size(); ++i) pool[t.cls].push_back(t.offset + i);
  }
  dpsynth::Rng rng(seed);
  std::map<dpsynth::TensorClass, GradientCheck> out;
  auto values = params.values();
  for (auto& [cls, coords] : pool) {
    GradientCheck& check = out[cls];
    for (int k = 0; k < per_class; ++k) {
      const size_t i = coords[rng.uniform_int(coords.size())];
      const double saved = values[i];
      values[i] = saved + h;
      const double up = sequence_loss(params, tokens, options);
      values[i] = saved - h;
      const double down = sequence_loss(params, tokens, options);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      check.max_relative_error = std::max(check.max_relative_error, gradient_relative_error(grad[i], numeric));
      const double diff = std::abs(grad[i] - numeric);
      const double scale = std::max(std::abs(grad[i]), std::abs(numeric));
      check.max_abs_error = std::max(check.max_abs_error, diff);
      check.max_abs_gradient = std::max(check.max_abs_gradient, std::abs(grad[i]));
      if (scale >= 1e-6) check.max_unfloored_relative_error = std::max(check.max_unfloored_relative_error, diff / scale);
      ++check.coordinates;
    }
  }
  return out;
}

}  // namespace testing_oracles

#endif  // DPSYNTH_TESTS_GRADIENT_CHECK_H_
