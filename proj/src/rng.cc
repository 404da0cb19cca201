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

#include "dpsynth/rng.h"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dpsynth {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double radius = std::sqrt(-2.0 * std::log(uniform_open()));
  const double angle = 2.0 * std::numbers::pi * uniform();
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

uint64_t Rng::uniform_int(uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: empty range");
  // Rejection sampling removes modulo bias.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

int64_t Rng::negative_binomial(int successes, double p) {
  if (successes < 1 || !(p > 0.0 && p <= 1.0)) {
    throw std::invalid_argument("negative_binomial: bad parameters");
  }
  if (p == 1.0) return 0;
  const double log_fail = std::log1p(-p);
  int64_t total = 0;
  for (int i = 0; i < successes; ++i) {
    total += static_cast<int64_t>(std::floor(std::log(uniform_open()) / log_fail));
  }
  return total;
}

size_t Rng::categorical(const std::vector<double>& weights) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  if (!(sum > 0.0)) throw std::invalid_argument("categorical: no mass");
  double u = uniform() * sum;
  for (size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  // Rounding fell off the end; return the last index with mass.
  for (size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t fnv1a64(std::string_view bytes, uint64_t basis) {
  uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t derive_seed(uint64_t master_seed, std::string_view stage, uint64_t index) {
  uint64_t h = splitmix64(master_seed);
  h = splitmix64(h ^ fnv1a64(stage));
  return splitmix64(h ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

}  // namespace dpsynth
