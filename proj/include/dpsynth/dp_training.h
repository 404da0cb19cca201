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

#ifndef DPSYNTH_DP_TRAINING_H_
#define DPSYNTH_DP_TRAINING_H_

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpsynth/language_model.h"
#include "dpsynth/privacy_accountant.h"
#include "dpsynth/rng.h"

namespace dpsynth {

enum class OptimizerKind { kSgd, kAdam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(std::string_view name);

// Applies a (possibly noisy) gradient. Adam on a privatized gradient is
// post-processing and costs no extra budget.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, size_t dim);

  void apply(std::span<double> params, std::span<const double> grad);

  OptimizerKind kind() const { return kind_; }
  int64_t steps() const { return steps_; }

  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

 private:
  OptimizerKind kind_;
  double learning_rate_;
  int64_t steps_ = 0;
  std::vector<double> first_moment_;
  std::vector<double> second_moment_;
};

struct DpSgdConfig {
  double clip_norm = 1.0;
  double noise_multiplier = 0.0;
  int expected_batch_size = 256;
  double epochs = 1.0;
  double learning_rate = 1e-4;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  uint64_t seed = 0;
  int num_threads = 1;

  void validate() const;
  // q = B / N, capped at 1.
  double sampling_rate(size_t dataset_size) const;
  // ceil(E * N / B).
  int64_t total_steps(size_t dataset_size) const;
};

// grad * min(1, C / ||grad||). C = +inf is the identity.
std::vector<double> clip(std::span<const double> grad, double clip_norm);
// Clips in place and returns the pre-clip norm.
double clip_in_place(std::span<double> grad, double clip_norm);

struct StepStats {
  int64_t step = 0;
  size_t batch_size = 0;
  double mean_loss = 0.0;
  double mean_grad_norm = 0.0;
  double max_post_clip_norm = 0.0;
  double clipped_fraction = 0.0;
};

// Loss of one example with its gradient written into `grad`. Must be safe to
// call concurrently with distinct buffers.
using ExampleGradientFn = std::function<double(size_t example, std::span<double> grad)>;

// DP-SGD state: optimizer moments, the step counter and two seeded streams
// (Poisson sampling and Gaussian noise). The noise stream is test-grade
// randomness, not suitable for deployment.
class DpSgdState {
 public:
  DpSgdState(const DpSgdConfig& config, size_t dataset_size, size_t dim);

  // Each example is included independently with probability q.
  std::vector<size_t> sample_batch();

  // Update direction (sum_i clip(g_i, C) + N(0, sigma^2 C^2 I)) / B with B the
  // expected batch size. Throws std::runtime_error on a non-finite gradient
  // without touching `params`.
  StepStats step(std::span<double> params, std::span<const size_t> batch, const ExampleGradientFn& gradient);

  int64_t steps() const { return steps_; }
  int64_t noise_draws() const { return noise_draws_; }
  const DpSgdConfig& config() const { return config_; }
  size_t dataset_size() const { return dataset_size_; }
  // The averaged noisy gradient of the most recent step.
  std::span<const double> last_update() const { return update_; }

 private:
  DpSgdConfig config_;
  size_t dataset_size_;
  size_t dim_;
  Rng sampling_rng_;
  Rng noise_rng_;
  Optimizer optimizer_;
  int64_t steps_ = 0;
  int64_t noise_draws_ = 0;
  std::vector<double> update_;
  std::vector<std::vector<double>> chunk_sums_;
};

// ---------------------------------------------------------------------------
// Language-model training

struct TrainConfig {
  // true: DP-SGD with Poisson sampling. false: shuffled minibatches without
  // clipping or noise.
  bool dp = true;
  DpSgdConfig sgd;
  // When set (dp only), sigma is calibrated for this epsilon.
  std::optional<double> target_epsilon;
  // 0 selects 1 / (N ln N).
  double delta = 0.0;
  LossOptions loss;
  // Validation every this many steps (0: once per epoch) plus at the end.
  int64_t eval_interval = 0;
};

struct TrainingLogEntry {
  int64_t step = 0;
  double loss = 0.0;
  double epsilon_so_far = 0.0;
  double mean_grad_norm = 0.0;
  double clipped_fraction = 0.0;
  double max_post_clip_norm = 0.0;
  size_t batch_size = 0;
  std::optional<double> validation_loss;
};

std::string to_json_line(const TrainingLogEntry& entry);

struct TrainResult {
  ModelParams params;  // checkpoint with the best validation loss
  std::vector<TrainingLogEntry> log;
  std::optional<PrivacySpend> spend;
  int64_t steps = 0;
  int64_t best_step = 0;
  double best_validation_loss = std::numeric_limits<double>::infinity();
  double noise_multiplier = 0.0;
  double delta = 0.0;
};

TrainResult train_language_model(std::span<const TokenSequence> train, std::span<const TokenSequence> validation,
                                 const ModelConfig& model_config, const TrainConfig& config);

// Mean per-sequence loss over `data`.
double mean_loss(const ModelParams& params, std::span<const TokenSequence> data, const LossOptions& options = {},
                 int num_threads = 1);

}  // namespace dpsynth

#endif  // DPSYNTH_DP_TRAINING_H_
