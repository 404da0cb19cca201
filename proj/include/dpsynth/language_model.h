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

#ifndef DPSYNTH_LANGUAGE_MODEL_H_
#define DPSYNTH_LANGUAGE_MODEL_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpsynth/corpus.h"

namespace dpsynth {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Eigen picks scalar or packet code paths for mapped tensors from their
// runtime address, which changes rounding. Parameters and gradient scratch
// therefore live in Eigen-aligned storage so results are bit-reproducible.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

struct ModelConfig {
  int vocab_size = 0;
  int context_length = 128;
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int ff_dim = 512;
  uint64_t init_seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class TensorClass { kEmbedding, kAttention, kMlp, kNorm, kOutput };

std::string_view to_string(TensorClass cls);

struct TensorSpec {
  std::string name;
  TensorClass cls;
  size_t offset;
  int rows;
  int cols;  // vectors are stored as a single row

  size_t size() const { return static_cast<size_t>(rows) * static_cast<size_t>(cols); }
};

// Placement of every named tensor inside one flat parameter vector. Gradient
// vectors share the same layout.
class ParameterLayout {
 public:
  struct Block {
    size_t ln1_gain, ln1_bias, qkv_weight, qkv_bias, proj_weight, proj_bias;
    size_t ln2_gain, ln2_bias, fc_weight, fc_bias, out_weight, out_bias;
  };

  explicit ParameterLayout(const ModelConfig& config);

  size_t size() const { return size_; }
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  const TensorSpec& tensor(size_t index) const { return tensors_[index]; }
  const Block& block(int layer) const { return blocks_[static_cast<size_t>(layer)]; }

  size_t token_embedding() const { return token_embedding_; }
  size_t position_embedding() const { return position_embedding_; }
  size_t final_gain() const { return final_gain_; }
  size_t final_bias() const { return final_bias_; }
  size_t head_weight() const { return head_weight_; }
  size_t head_bias() const { return head_bias_; }

 private:
  size_t add(std::string name, TensorClass cls, int rows, int cols);

  std::vector<TensorSpec> tensors_;
  std::vector<Block> blocks_;
  size_t token_embedding_ = 0, position_embedding_ = 0;
  size_t final_gain_ = 0, final_bias_ = 0, head_weight_ = 0, head_bias_ = 0;
  size_t size_ = 0;
};

// All trainable tensors of the decoder, stored contiguously.
class ModelParams {
 public:
  // Zero-filled parameters for `config`.
  explicit ModelParams(const ModelConfig& config);

  // Weights ~ N(0, 0.02) from config.init_seed, layer-norm gains 1, biases 0
  // and a zero output projection (so the initial model predicts uniformly).
  static ModelParams initialize(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  size_t size() const { return values_.size(); }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  std::vector<double> flatten() const { return {values_.begin(), values_.end()}; }
  void unflatten(std::span<const double> flat);

  bool all_finite() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.config_ == b.config_ && a.values_ == b.values_;
  }

 private:
  ModelConfig config_;
  ParameterLayout layout_;
  AlignedVector values_;
};

struct LossOptions {
  // When false, only body tokens and EOS are scored (targets after SEP).
  bool include_control_code = true;
};

enum class ScoreRegion { kFull, kBody };

struct ForwardOutput {
  // One (length x vocab) logit matrix per sequence; trailing PAD is dropped.
  std::vector<RowMatrix> logits;
  std::vector<double> sequence_losses;
  // Mean of the per-sequence losses.
  double loss = 0.0;
};

ForwardOutput forward(const ModelParams& params, std::span<const TokenSequence> batch,
                      const LossOptions& options = {});

// Loss of one sequence and its gradient written into `grad` (overwritten).
// Thread-safe for concurrent calls with distinct `grad` buffers.
double example_gradient(const ModelParams& params, std::span<const TokenId> tokens, const LossOptions& options,
                        std::span<double> grad);

// Loss of one sequence; `grad` is incremented by scale * d(loss)/d(params).
// The gradient is formed in aligned scratch first, so the result does not
// depend on the address of `grad`.
double accumulate_gradient(const ModelParams& params, std::span<const TokenId> tokens, const LossOptions& options,
                           double scale, std::span<double> grad);

std::vector<std::vector<double>> backward_per_example(const ModelParams& params,
                                                      std::span<const TokenSequence> batch,
                                                      const LossOptions& options = {});

// Gradient of the mean per-sequence loss, accumulated in one buffer.
std::vector<double> batch_gradient(const ModelParams& params, std::span<const TokenSequence> batch,
                                   const LossOptions& options = {});

// exp(mean next-token NLL) over the scored region. With kBody only tokens
// after SEP are scored; kFull scores everything after BOS.
double perplexity(const ModelParams& params, std::span<const TokenId> tokens,
                  ScoreRegion region = ScoreRegion::kFull);

// Perplexity over the targets in [begin, end) (positions in `tokens`).
double span_perplexity(const ModelParams& params, std::span<const TokenId> tokens, size_t begin, size_t end);

// Key/value-cached decoder for sampling. Produces logits identical (up to
// rounding) to the full forward pass.
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const ModelParams& params);

  void reset();
  // Appends `token` and returns the logits for the next position.
  std::span<const double> push(TokenId token);
  int position() const { return position_; }
  int capacity() const { return params_->config().context_length; }

 private:
  const ModelParams* params_;
  int position_ = 0;
  std::vector<RowMatrix> keys_;
  std::vector<RowMatrix> values_;
  Eigen::RowVectorXd x_, a_, qkv_, att_, hidden_, scores_;
  Eigen::RowVectorXd logits_;
};

// Versioned text checkpoint: config, optional metadata line, and each named
// tensor with a shape header followed by hex-float values.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const std::string& metadata = "");
ModelParams load_checkpoint(const std::filesystem::path& path, std::string* metadata = nullptr);

}  // namespace dpsynth

#endif  // DPSYNTH_LANGUAGE_MODEL_H_
