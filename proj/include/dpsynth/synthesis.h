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

#ifndef DPSYNTH_SYNTHESIS_H_
#define DPSYNTH_SYNTHESIS_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dpsynth/corpus.h"
#include "dpsynth/language_model.h"

namespace dpsynth {

struct DecodingPolicy {
  int top_k = 50;
  double top_p = 0.9;
  double temperature = 1.0;
  // 0 means "up to the context length".
  int max_new_tokens = 0;
  uint64_t seed = 0;

  void validate() const;
};

// Softmax of logits / temperature restricted to the intersection of the top_k
// most probable tokens and the shortest probability-sorted prefix whose mass
// reaches top_p, renormalized. Sorting breaks ties by ascending token id.
// Tokens outside the support get exactly 0.
std::vector<double> filter_logits(std::span<const double> logits, const DecodingPolicy& policy);

struct GenerationRequest {
  AttributeMap attributes;
  DecodingPolicy policy;
  size_t count = 0;
};

// Called for every sampled token with the filtered distribution it was drawn
// from. Used to replay and audit the sampler.
using SampleObserver = std::function<void(size_t sample_index, std::span<const double> probs, TokenId token)>;

// Label-conditioned sampler. Holds only the model, the vocabulary and the
// schema; it has no access to training records.
class Generator {
 public:
  Generator(const ModelParams& params, const Vocabulary& vocab, const AttributeSchema& schema, int num_threads = 1);

  // One sample with the per-sample seed derive_seed(policy.seed, "sample", index).
  Record sample(const AttributeMap& attributes, const DecodingPolicy& policy, uint64_t sample_index,
                const SampleObserver& observer = nullptr) const;

  // `request.count` samples with indices first_index, first_index + 1, ...
  std::vector<Record> generate(const GenerationRequest& request, uint64_t first_index = 0,
                               const SampleObserver& observer = nullptr) const;

  // Allocates `total` samples over labels (largest remainder), shuffles the
  // label order with the policy seed and samples each. Warnings about labels
  // that received no samples are appended to `warnings` when given.
  std::vector<Record> generate_dataset(std::span<const double> label_distribution, size_t total,
                                       const DecodingPolicy& policy,
                                       std::vector<std::string>* warnings = nullptr) const;

 private:
  const ModelParams* params_;
  const Vocabulary* vocab_;
  const AttributeSchema* schema_;
  int num_threads_;
};

// floor(total * p_i) per label, with the leftover units given to the largest
// fractional parts (ties to the lower label index).
std::vector<size_t> allocate_counts(std::span<const double> distribution, size_t total);

// Exact empirical label frequencies of `records`.
std::vector<double> empirical_label_distribution(const AttributeSchema& schema, std::span<const Record> records);

}  // namespace dpsynth

#endif  // DPSYNTH_SYNTHESIS_H_
