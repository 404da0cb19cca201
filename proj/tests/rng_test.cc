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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

namespace dpsynth {
namespace {

TEST(RngTest, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const uint64_t x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(RngTest, UniformRanges) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    const double v = rng.uniform_open();
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_LT(rng.uniform_int(7), 7u);
  }
}

TEST(RngTest, NormalMoments) {
  Rng rng(2);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(RngTest, CategoricalMatchesWeights) {
  Rng rng(3);
  const std::vector<double> w = {1.0, 2.0, 3.0, 0.0, 4.0};
  std::vector<double> counts(w.size(), 0.0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) counts[rng.categorical(w)] += 1.0;
  EXPECT_EQ(counts[3], 0.0);
  double chi2 = 0.0;
  for (size_t k = 0; k < w.size(); ++k) {
    if (w[k] == 0.0) continue;
    const double e = n * w[k] / 10.0;
    chi2 += (counts[k] - e) * (counts[k] - e) / e;
  }
  const boost::math::chi_squared dist(3);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 1e-4);
}

TEST(RngTest, NegativeBinomialMean) {
  Rng rng(4);
  const int n = 100000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += static_cast<double>(rng.negative_binomial(4, 0.25));
  EXPECT_NEAR(s / n, 4 * 0.75 / 0.25, 0.1);
}

TEST(RngTest, ShuffleIsPermutation) {
  Rng rng(5);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  rng.shuffle(w);
  EXPECT_NE(v, w);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(v, w);
}

TEST(DeriveSeedTest, StableAndSeparated) {
  EXPECT_EQ(derive_seed(1, "training"), derive_seed(1, "training"));
  EXPECT_NE(derive_seed(1, "training"), derive_seed(2, "training"));
  EXPECT_NE(derive_seed(1, "training"), derive_seed(1, "generation"));
  EXPECT_NE(derive_seed(1, "sample", 0), derive_seed(1, "sample", 1));
}

TEST(DeriveSeedTest, NoCollisionsAcrossManyIndices) {
  std::set<uint64_t> seen;
  for (uint64_t i = 0; i < 200000; ++i) seen.insert(derive_seed(7, "sample", i));
  for (uint64_t s = 0; s < 1000; ++s) seen.insert(derive_seed(s, "corpus"));
  EXPECT_EQ(seen.size(), 201000u);
}

TEST(HashTest, KnownFnvValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

}  // namespace
}  // namespace dpsynth
