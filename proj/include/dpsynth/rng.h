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

#ifndef DPSYNTH_RNG_H_
#define DPSYNTH_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace dpsynth {

// Seeded pseudo-random stream with distributions implemented here rather than
// taken from <random>, so sampled values do not depend on the standard
// library vendor. Not deployment-grade randomness: every stream is fully
// determined by its seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe to pass to log().
  double uniform_open() { return 1.0 - uniform(); }

  // Standard normal via Box-Muller, caching the second variate.
  double normal();

  // Uniform integer in [0, n). n must be positive.
  uint64_t uniform_int(uint64_t n);

  bool bernoulli(double p) { return uniform() < p; }

  // Number of failures before `successes` successes with success
  // probability p (sum of geometric variates).
  int64_t negative_binomial(int successes, double p);

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (size_t i = values.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  // Index drawn from unnormalized non-negative weights.
  size_t categorical(const std::vector<double>& weights);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

uint64_t splitmix64(uint64_t x);

// 64-bit FNV-1a over raw bytes.
uint64_t fnv1a64(std::string_view bytes, uint64_t basis = 0xcbf29ce484222325ULL);

// Hash-based seed for (master seed, stage name, index). Stable across
// releases: changing this function invalidates every recorded manifest.
uint64_t derive_seed(uint64_t master_seed, std::string_view stage, uint64_t index = 0);

}  // namespace dpsynth

#endif  // DPSYNTH_RNG_H_
