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


#include "dpsynth/language_model.h"

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "gradient_check.h"

namespace dpsynth {
namespace {

ModelConfig tiny_config(int d = 8, int layers = 2) {
  ModelConfig c;
  c.vocab_size = 20;
  c.context_length = 16;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = 2;
  c.ff_dim = 2 * d;
  c.init_seed = 3;
  return c;
}

TokenSequence random_sequence(Rng& rng, size_t prompt, size_t body, int vocab) {
  TokenSequence s{Vocabulary::kBos};
  for (size_t i = 0; i < prompt; ++i) s.push_back(static_cast<TokenId>(5 + rng.uniform_int(vocab - 5)));
  s.push_back(Vocabulary::kSep);
  for (size_t i = 0; i < body; ++i) s.push_back(static_cast<TokenId>(5 + rng.uniform_int(vocab - 5)));
  s.push_back(Vocabulary::kEos);
  return s;
}

ModelParams random_params(const ModelConfig& c, uint64_t seed) {
  ModelParams p = ModelParams::initialize(c);
  testing_oracles::randomize(p, seed);
  return p;
}

TEST(ModelConfigTest, RejectsBadShapes) {
  ModelConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(LayoutTest, TensorsTileTheParameterVector) {
  const ModelParams p(tiny_config());
  size_t expected = 0;
  for (const TensorSpec& t : p.layout().tensors()) {
    EXPECT_EQ(t.offset, expected) << t.name;
    expected += t.size();
  }
  EXPECT_EQ(expected, p.size());
}

TEST(ModelTest, FreshModelPredictsUniformly) {
  const ModelConfig c = tiny_config();
  const ModelParams p = ModelParams::initialize(c);
  Rng rng(1);
  const std::vector<TokenSequence> batch{random_sequence(rng, 3, 5, c.vocab_size)};
  EXPECT_NEAR(forward(p, batch).loss, std::log(c.vocab_size), 1e-12);
}

TEST(GradientTest, MatchesCentralDifferences) {
  const ModelConfig c = tiny_config();
  const ModelParams p = random_params(c, 7);
  Rng rng(2);
  const TokenSequence seq = random_sequence(rng, 4, 7, c.vocab_size);
  for (bool control : {true, false}) {
    const auto checks = testing_oracles::check_gradients(p, seq, LossOptions{control}, 40, 11);
    ASSERT_EQ(checks.size(), 5u);
    for (const auto& [cls, check] : checks) {
      EXPECT_LE(check.max_relative_error, 1e-4) << to_string(cls);
    }
  }
}

TEST(GradientTest, BatchGradientIsMeanOfExamples) {
  const ModelConfig c = tiny_config();
  const ModelParams p = random_params(c, 8);
  Rng rng(3);
  std::vector<TokenSequence> batch;
  for (size_t len : {2, 6, 9}) batch.push_back(random_sequence(rng, 3, len, c.vocab_size));
  const auto per = backward_per_example(p, batch);
  const auto mean = batch_gradient(p, batch);
  ASSERT_EQ(per.size(), 3u);
  for (size_t i = 0; i < p.size(); ++i) {
    EXPECT_NEAR(mean[i], (per[0][i] + per[1][i] + per[2][i]) / 3.0, 1e-12);
  }
}

TEST(GradientTest, TrailingPaddingChangesNothing) {
  const ModelConfig c = tiny_config();
  const ModelParams p = random_params(c, 9);
  Rng rng(4);
  const TokenSequence seq = random_sequence(rng, 3, 4, c.vocab_size);
  TokenSequence padded = seq;
  padded.resize(c.context_length, Vocabulary::kPad);
  std::vector<double> g1(p.size()), g2(p.size());
  const double l1 = example_gradient(p, seq, {}, g1);
  const double l2 = example_gradient(p, padded, {}, g2);
  EXPECT_EQ(l1, l2);
  double worst = 0.0;
  for (size_t i = 0; i < g1.size(); ++i) worst = std::max(worst, std::abs(g1[i] - g2[i]));
  EXPECT_LE(worst, 1e-14);
}

TEST(GradientTest, ControlCodeExcludedFromLossWhenRequested) {
  const ModelConfig c = tiny_config();
  const ModelParams p = random_params(c, 10);
  Rng rng(5);
  TokenSequence a = random_sequence(rng, 3, 4, c.vocab_size);
  TokenSequence b = a;
  b[2] = static_cast<TokenId>(b[2] == 5 ? 6 : 5);  // changes a control-code target only
  const std::vector<TokenSequence> ba{a}, bb{b};
  const LossOptions body_only{false};
  const double full_a = forward(p, ba).loss;
  const double full_b = forward(p, bb).loss;
  EXPECT_NE(full_a, full_b);
  EXPECT_NEAR(std::log(perplexity(p, a, ScoreRegion::kBody)), forward(p, ba, body_only).loss, 1e-12);
  EXPECT_NEAR(std::log(perplexity(p, a, ScoreRegion::kFull)), full_a, 1e-12);
}

TEST(DecoderTest, IncrementalLogitsMatchForward) {
  const ModelConfig c = tiny_config(8, 3);
  const ModelParams p = random_params(c, 12);
  Rng rng(6);
  TokenSequence seq = random_sequence(rng, 4, 9, c.vocab_size);
  seq.resize(c.context_length, Vocabulary::kEos);
  seq[c.context_length - 1] = 7;
  const std::vector<TokenSequence> batch{seq};
  const ForwardOutput out = forward(p, batch);
  IncrementalDecoder dec(p);
  for (size_t t = 0; t < seq.size(); ++t) {
    const auto logits = dec.push(seq[t]);
    for (int v = 0; v < c.vocab_size; ++v) EXPECT_NEAR(logits[v], out.logits[0](t, v), 1e-10);
  }
  EXPECT_EQ(dec.position(), c.context_length);
  EXPECT_THROW(dec.push(5), std::out_of_range);
  dec.reset();
  const auto first = dec.push(seq[0]);
  EXPECT_NEAR(first[3], out.logits[0](0, 3), 1e-10);
}

TEST(ModelTest, RejectsOutOfRangeTokens) {
  const ModelConfig c = tiny_config();
  const ModelParams p = ModelParams::initialize(c);
  std::vector<double> g(p.size());
  EXPECT_THROW(example_gradient(p, TokenSequence{0, 3, 99, 1}, {}, g), std::out_of_range);
  EXPECT_THROW(example_gradient(p, TokenSequence(c.context_length + 1, 5), {}, g), std::invalid_argument);
}

TEST(CheckpointTest, RoundTripIsBitExact) {
  const ModelConfig c = tiny_config();
  const ModelParams p = random_params(c, 13);
  const auto path = std::filesystem::temp_directory_path() / "dpsynth_lm_test.ckpt";
  save_checkpoint(path, p, "{\"note\":\"x\"}");
  std::string meta;
  const ModelParams q = load_checkpoint(path, &meta);
  EXPECT_EQ(p, q);
  EXPECT_EQ(meta, "{\"note\":\"x\"}");
  std::filesystem::remove(path);
  EXPECT_ANY_THROW(load_checkpoint(path));
}

}  // namespace
}  // namespace dpsynth
