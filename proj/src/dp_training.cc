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

#include "dpsynth/dp_training.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "dpsynth/parallel.h"

namespace dpsynth {
namespace {

constexpr size_t kChunkSize = 16;

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct ChunkStats {
  double loss = 0.0;
  double grad_norm = 0.0;
  double max_post_clip = 0.0;
  size_t clipped = 0;
};

// Sums clipped per-example gradients chunk by chunk and then adds the chunk
// sums in chunk order, so the result does not depend on the thread count.
ChunkStats reduce_clipped(std::span<const size_t> batch, const ExampleGradientFn& gradient, double clip_norm,
                          int threads, std::vector<std::vector<double>>& chunk_sums, std::span<double> total) {
  const size_t dim = total.size();
  const size_t n_chunks = (batch.size() + kChunkSize - 1) / kChunkSize;
  if (chunk_sums.size() < n_chunks) chunk_sums.resize(n_chunks);
  std::vector<ChunkStats> stats(n_chunks);
  parallel_for(n_chunks, threads, [&](size_t c) {
    std::vector<double>& sum = chunk_sums[c];
    sum.assign(dim, 0.0);
    std::vector<double> g(dim);
    const size_t end = std::min(batch.size(), (c + 1) * kChunkSize);
    for (size_t i = c * kChunkSize; i < end; ++i) {
      stats[c].loss += gradient(batch[i], g);
      const double norm = clip_in_place(g, clip_norm);
      stats[c].grad_norm += norm;
      if (norm > clip_norm) ++stats[c].clipped;
      stats[c].max_post_clip = std::max(stats[c].max_post_clip, std::min(norm, clip_norm));
      for (size_t k = 0; k < dim; ++k) sum[k] += g[k];
    }
  });
  std::fill(total.begin(), total.end(), 0.0);
  ChunkStats out;
  for (size_t c = 0; c < n_chunks; ++c) {
    for (size_t k = 0; k < dim; ++k) total[k] += chunk_sums[c][k];
    out.loss += stats[c].loss;
    out.grad_norm += stats[c].grad_norm;
    out.clipped += stats[c].clipped;
    out.max_post_clip = std::max(out.max_post_clip, stats[c].max_post_clip);
  }
  return out;
}

}  // namespace

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, size_t dim)
    : kind_(kind), learning_rate_(learning_rate) {
  if (kind_ == OptimizerKind::kAdam) {
    first_moment_.assign(dim, 0.0);
    second_moment_.assign(dim, 0.0);
  }
}

void Optimizer::apply(std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size()) throw std::invalid_argument("optimizer: size mismatch");
  ++steps_;
  if (kind_ == OptimizerKind::kSgd) {
    for (size_t i = 0; i < params.size(); ++i) params[i] -= learning_rate_ * grad[i];
    return;
  }
  if (first_moment_.size() != params.size()) throw std::invalid_argument("optimizer: size mismatch");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps_));
  for (size_t i = 0; i < params.size(); ++i) {
    first_moment_[i] = beta1 * first_moment_[i] + (1.0 - beta1) * grad[i];
    second_moment_[i] = beta2 * second_moment_[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double m = first_moment_[i] / c1;
    const double v = second_moment_[i] / c2;
    params[i] -= learning_rate_ * m / (std::sqrt(v) + epsilon);
  }
}

void DpSgdConfig::validate() const {
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  if (!(noise_multiplier >= 0.0) || !std::isfinite(noise_multiplier))
    throw std::invalid_argument("noise_multiplier must be finite and non-negative");
  if (noise_multiplier > 0.0 && !std::isfinite(clip_norm))
    throw std::invalid_argument("noise requires a finite clip_norm");
  if (expected_batch_size <= 0) throw std::invalid_argument("expected_batch_size must be positive");
  if (!(epochs > 0.0)) throw std::invalid_argument("epochs must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (num_threads <= 0) throw std::invalid_argument("num_threads must be positive");
}

double DpSgdConfig::sampling_rate(size_t dataset_size) const {
  if (dataset_size == 0) throw std::invalid_argument("empty dataset");
  return std::min(1.0, static_cast<double>(expected_batch_size) / static_cast<double>(dataset_size));
}

int64_t DpSgdConfig::total_steps(size_t dataset_size) const {
  const double steps = std::ceil(epochs * static_cast<double>(dataset_size) / expected_batch_size - 1e-9);
  return std::max<int64_t>(1, static_cast<int64_t>(steps));
}

double clip_in_place(std::span<double> grad, double clip_norm) {
  const double norm = l2_norm(grad);
  if (norm > clip_norm) {
    const double factor = clip_norm / norm;
    for (double& g : grad) g *= factor;
  }
  return norm;
}

std::vector<double> clip(std::span<const double> grad, double clip_norm) {
  std::vector<double> out(grad.begin(), grad.end());
  clip_in_place(out, clip_norm);
  return out;
}

DpSgdState::DpSgdState(const DpSgdConfig& config, size_t dataset_size, size_t dim)
    : config_(config),
      dataset_size_(dataset_size),
      dim_(dim),
      sampling_rng_(derive_seed(config.seed, "poisson-sampling")),
      noise_rng_(derive_seed(config.seed, "gaussian-noise")),
      optimizer_(config.optimizer, config.learning_rate, dim),
      update_(dim, 0.0) {
  config_.validate();
  if (dataset_size == 0) throw std::invalid_argument("empty dataset");
}

std::vector<size_t> DpSgdState::sample_batch() {
  const double q = config_.sampling_rate(dataset_size_);
  std::vector<size_t> batch;
  batch.reserve(static_cast<size_t>(q * static_cast<double>(dataset_size_) * 1.2) + 8);
  for (size_t i = 0; i < dataset_size_; ++i) {
    if (sampling_rng_.bernoulli(q)) batch.push_back(i);
  }
  return batch;
}

StepStats DpSgdState::step(std::span<double> params, std::span<const size_t> batch,
                           const ExampleGradientFn& gradient) {
  if (params.size() != dim_) throw std::invalid_argument("DP-SGD: parameter size mismatch");
  const ChunkStats cs = reduce_clipped(batch, gradient, config_.clip_norm, config_.num_threads, chunk_sums_, update_);
  // One Gaussian draw per step, including sigma = 0 and empty batches.
  const double scale = config_.noise_multiplier * config_.clip_norm;
  for (size_t k = 0; k < dim_; ++k) {
    const double z = noise_rng_.normal();
    if (scale > 0.0) update_[k] += scale * z;
  }
  ++noise_draws_;
  const double inv_b = 1.0 / static_cast<double>(config_.expected_batch_size);
  for (double& u : update_) u *= inv_b;
  if (!all_finite(update_)) {
    std::ostringstream msg;
    msg << "DP-SGD: non-finite gradient at step " << steps_ + 1 << " (batch of " << batch.size() << ")";
    throw std::runtime_error(msg.str());
  }
  optimizer_.apply(params, update_);
  ++steps_;
  StepStats stats;
  stats.step = steps_;
  stats.batch_size = batch.size();
  if (!batch.empty()) {
    const double n = static_cast<double>(batch.size());
    stats.mean_loss = cs.loss / n;
    stats.mean_grad_norm = cs.grad_norm / n;
    stats.clipped_fraction = static_cast<double>(cs.clipped) / n;
    stats.max_post_clip_norm = cs.max_post_clip;
  }
  return stats;
}

std::string to_json_line(const TrainingLogEntry& entry) {
  nlohmann::ordered_json j;
  j["step"] = entry.step;
  j["loss"] = entry.loss;
  j["epsilon_so_far"] = entry.epsilon_so_far;
  j["mean_grad_norm"] = entry.mean_grad_norm;
  j["clipped_fraction"] = entry.clipped_fraction;
  j["max_post_clip_norm"] = entry.max_post_clip_norm;
  j["batch_size"] = entry.batch_size;
  if (entry.validation_loss) j["validation_loss"] = *entry.validation_loss;
  return j.dump();
}

double mean_loss(const ModelParams& params, std::span<const TokenSequence> data, const LossOptions& options,
                 int num_threads) {
  if (data.empty()) throw std::invalid_argument("mean_loss: empty data");
  constexpr size_t kEvalChunk = 32;
  const size_t n_chunks = (data.size() + kEvalChunk - 1) / kEvalChunk;
  std::vector<double> sums(n_chunks, 0.0);
  parallel_for(n_chunks, num_threads, [&](size_t c) {
    const size_t begin = c * kEvalChunk;
    const size_t end = std::min(data.size(), begin + kEvalChunk);
    const ForwardOutput out = forward(params, data.subspan(begin, end - begin), options);
    for (double l : out.sequence_losses) sums[c] += l;
  });
  double total = 0.0;
  for (double s : sums) total += s;
  return total / static_cast<double>(data.size());
}

TrainResult train_language_model(std::span<const TokenSequence> train, std::span<const TokenSequence> validation,
                                 const ModelConfig& model_config, const TrainConfig& config) {
  if (train.empty()) throw std::invalid_argument("training set is empty");
  model_config.validate();
  DpSgdConfig sgd = config.sgd;
  const size_t n = train.size();

  TrainResult result{.params = ModelParams::initialize(model_config), .log = {}, .spend = std::nullopt};
  result.delta = config.delta > 0.0 ? config.delta : delta_for_dataset_size(n);
  const int64_t total_steps = sgd.total_steps(n);
  const double q = sgd.sampling_rate(n);
  if (config.dp && config.target_epsilon) {
    sgd.noise_multiplier = calibrate_sigma(*config.target_epsilon, result.delta, q, total_steps);
  }
  if (!config.dp) sgd.noise_multiplier = 0.0;
  sgd.validate();
  result.noise_multiplier = sgd.noise_multiplier;

  ModelParams params = result.params;
  const size_t dim = params.size();
  const int64_t steps_per_epoch = std::max<int64_t>(1, (static_cast<int64_t>(n) + sgd.expected_batch_size - 1) /
                                                            sgd.expected_batch_size);
  const int64_t eval_interval = config.eval_interval > 0 ? config.eval_interval : steps_per_epoch;

  std::optional<RdpAccountant> accountant;
  if (config.dp && sgd.noise_multiplier > 0.0) accountant.emplace(sgd.noise_multiplier, q);

  auto gradient = [&](size_t example, std::span<double> grad) {
    return example_gradient(params, train[example], config.loss, grad);
  };

  auto maybe_validate = [&](TrainingLogEntry& entry) {
    if (validation.empty()) return;
    if (entry.step % eval_interval != 0 && entry.step != total_steps) return;
    const double v = mean_loss(params, validation, config.loss, sgd.num_threads);
    entry.validation_loss = v;
    if (v < result.best_validation_loss) {
      result.best_validation_loss = v;
      result.best_step = entry.step;
      result.params = params;
    }
  };

  if (config.dp) {
    DpSgdState state(sgd, n, dim);
    for (int64_t t = 0; t < total_steps; ++t) {
      const std::vector<size_t> batch = state.sample_batch();
      const StepStats s = state.step(params.values(), batch, gradient);
      TrainingLogEntry entry;
      entry.step = s.step;
      entry.loss = s.mean_loss;
      entry.mean_grad_norm = s.mean_grad_norm;
      entry.clipped_fraction = s.clipped_fraction;
      entry.max_post_clip_norm = s.max_post_clip_norm;
      entry.batch_size = s.batch_size;
      entry.epsilon_so_far = accountant ? accountant->spend(s.step, result.delta).epsilon
                                        : std::numeric_limits<double>::infinity();
      maybe_validate(entry);
      result.log.push_back(entry);
    }
    result.steps = state.steps();
    result.spend = compute_epsilon({sgd.noise_multiplier, q, result.steps}, result.delta);
  } else {
    Rng order_rng(derive_seed(sgd.seed, "minibatch-order"));
    Optimizer optimizer(sgd.optimizer, sgd.learning_rate, dim);
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    order_rng.shuffle(order);
    size_t cursor = 0;
    std::vector<std::vector<double>> chunk_sums;
    std::vector<double> grad(dim);
    std::vector<size_t> batch;
    const double no_clip = std::numeric_limits<double>::infinity();
    for (int64_t t = 0; t < total_steps; ++t) {
      batch.clear();
      while (batch.size() < static_cast<size_t>(sgd.expected_batch_size) && batch.size() < n) {
        if (cursor == n) {
          order_rng.shuffle(order);
          cursor = 0;
        }
        batch.push_back(order[cursor++]);
      }
      const ChunkStats cs = reduce_clipped(batch, gradient, no_clip, sgd.num_threads, chunk_sums, grad);
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (double& g : grad) g *= inv;
      if (!all_finite(grad)) {
        throw std::runtime_error("training: non-finite gradient at step " + std::to_string(t + 1));
      }
      optimizer.apply(params.values(), grad);
      TrainingLogEntry entry;
      entry.step = t + 1;
      entry.loss = cs.loss * inv;
      entry.mean_grad_norm = cs.grad_norm * inv;
      entry.max_post_clip_norm = cs.max_post_clip;
      entry.batch_size = batch.size();
      entry.epsilon_so_far = std::numeric_limits<double>::infinity();
      maybe_validate(entry);
      result.log.push_back(entry);
    }
    result.steps = total_steps;
  }
  if (validation.empty()) {
    result.params = params;
    result.best_step = result.steps;
  }
  if (!result.params.all_finite()) throw std::runtime_error("training produced non-finite parameters");
  return result;
}

}  // namespace dpsynth
