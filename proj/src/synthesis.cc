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

#include "dpsynth/synthesis.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dpsynth/parallel.h"
#include "dpsynth/rng.h"

namespace dpsynth {

void DecodingPolicy::validate() const {
  if (top_k < 1) throw std::invalid_argument("top_k must be at least 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("top_p must lie in (0, 1]");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw std::invalid_argument("temperature must be positive");
  if (max_new_tokens < 0) throw std::invalid_argument("max_new_tokens must be non-negative");
}

std::vector<double> filter_logits(std::span<const double> logits, const DecodingPolicy& policy) {
  policy.validate();
  const size_t n = logits.size();
  if (n == 0) throw std::invalid_argument("filter_logits: empty logits");
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double l : logits) {
    if (!std::isfinite(l)) throw std::invalid_argument("filter_logits: non-finite logit");
    max_logit = std::max(max_logit, l);
  }
  std::vector<double> probs(n);
  double z = 0.0;
  for (size_t i = 0; i < n; ++i) {
    probs[i] = std::exp((logits[i] - max_logit) / policy.temperature);
    z += probs[i];
  }
  for (double& p : probs) p /= z;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return probs[a] > probs[b]; });

  const size_t k = std::min(n, static_cast<size_t>(policy.top_k));
  size_t nucleus = n;
  double mass = 0.0;
  for (size_t r = 0; r < n; ++r) {
    mass += probs[order[r]];
    if (mass >= policy.top_p) {
      nucleus = r + 1;
      break;
    }
  }
  const size_t keep = std::min(k, nucleus);

  std::vector<double> out(n, 0.0);
  double kept = 0.0;
  for (size_t r = 0; r < keep; ++r) kept += probs[order[r]];
  for (size_t r = 0; r < keep; ++r) out[order[r]] = probs[order[r]] / kept;
  return out;
}

Generator::Generator(const ModelParams& params, const Vocabulary& vocab, const AttributeSchema& schema,
                     int num_threads)
    : params_(&params), vocab_(&vocab), schema_(&schema), num_threads_(std::max(1, num_threads)) {
  if (static_cast<size_t>(params.config().vocab_size) != vocab.size()) {
    throw std::invalid_argument("generator: model and vocabulary sizes differ");
  }
}

Record Generator::sample(const AttributeMap& attributes, const DecodingPolicy& policy, uint64_t sample_index,
                         const SampleObserver& observer) const {
  policy.validate();
  const ControlCode cc = render_control_code(*schema_, attributes);
  const TokenSequence prompt = tokenize(cc.rendered, "", *vocab_, std::numeric_limits<size_t>::max());
  // tokenize appends EOS after the empty body; the prompt ends at SEP.
  const size_t prompt_len = prompt.size() - 1;
  const int context = params_->config().context_length;
  if (prompt_len >= static_cast<size_t>(context)) {
    throw std::invalid_argument("generator: control code does not fit the context");
  }
  const int room = context - static_cast<int>(prompt_len);
  const int budget = policy.max_new_tokens > 0 ? std::min(policy.max_new_tokens, room) : room;

  Rng rng(derive_seed(policy.seed, "sample", sample_index));
  IncrementalDecoder decoder(*params_);
  std::span<const double> logits;
  for (size_t i = 0; i < prompt_len; ++i) logits = decoder.push(prompt[i]);

  TokenSequence body;
  bool finished = false;
  for (int step = 0; step < budget; ++step) {
    const std::vector<double> probs = filter_logits(logits, policy);
    const auto token = static_cast<TokenId>(rng.categorical(probs));
    if (observer) observer(sample_index, probs, token);
    if (token == Vocabulary::kEos) {
      finished = true;
      break;
    }
    body.push_back(token);
    if (step + 1 < budget) logits = decoder.push(token);
  }

  Record record;
  record.attributes = attributes;
  record.text = detokenize(body, *vocab_);
  record.source = RecordSource::kSynthetic;
  record.truncated = !finished;
  // Bodies made only of reserved tokens (e.g. PAD) come from a broken model.
  record.degenerate = record.text.empty() && !body.empty();
  return record;
}

std::vector<Record> Generator::generate(const GenerationRequest& request, uint64_t first_index,
                                        const SampleObserver& observer) const {
  request.policy.validate();
  validate_record(*schema_, Record{request.attributes, "", RecordSource::kSynthetic});
  std::vector<Record> out(request.count);
  // Observers are not assumed thread-safe.
  const int threads = observer ? 1 : num_threads_;
  parallel_for(request.count, threads,
               [&](size_t i) { out[i] = sample(request.attributes, request.policy, first_index + i, observer); });
  return out;
}

std::vector<Record> Generator::generate_dataset(std::span<const double> label_distribution, size_t total,
                                                const DecodingPolicy& policy,
                                                std::vector<std::string>* warnings) const {
  policy.validate();
  if (label_distribution.size() != schema_->label_count()) {
    throw std::invalid_argument("generate_dataset: distribution size does not match the schema");
  }
  const std::vector<size_t> counts = allocate_counts(label_distribution, total);
  std::vector<size_t> labels;
  labels.reserve(total);
  size_t nonzero = 0;
  size_t starved = 0;
  for (size_t l = 0; l < counts.size(); ++l) {
    if (label_distribution[l] > 0.0) {
      ++nonzero;
      if (counts[l] == 0) ++starved;
    }
    labels.insert(labels.end(), counts[l], l);
  }
  if (warnings && starved > 0) {
    warnings->push_back("total " + std::to_string(total) + " is below the " + std::to_string(nonzero) +
                        " labels with nonzero mass; " + std::to_string(starved) + " labels get no samples");
  }
  Rng order_rng(derive_seed(policy.seed, "label-order"));
  order_rng.shuffle(labels);

  std::vector<Record> out(labels.size());
  parallel_for(labels.size(), num_threads_, [&](size_t i) {
    out[i] = sample(attributes_for_label(*schema_, labels[i]), policy, i);
  });
  return out;
}

std::vector<size_t> allocate_counts(std::span<const double> distribution, size_t total) {
  if (distribution.empty()) throw std::invalid_argument("allocate_counts: empty distribution");
  double sum = 0.0;
  for (double p : distribution) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("allocate_counts: invalid probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("allocate_counts: distribution must sum to 1");

  std::vector<size_t> counts(distribution.size());
  std::vector<double> remainder(distribution.size());
  size_t assigned = 0;
  for (size_t i = 0; i < distribution.size(); ++i) {
    const double exact = static_cast<double>(total) * distribution[i] / sum;
    counts[i] = static_cast<size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::vector<size_t> order(distribution.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return remainder[a] > remainder[b]; });
  for (size_t r = 0; assigned < total; r = (r + 1) % order.size()) {
    ++counts[order[r]];
    ++assigned;
  }
  return counts;
}

std::vector<double> empirical_label_distribution(const AttributeSchema& schema, std::span<const Record> records) {
  if (records.empty()) throw std::invalid_argument("empirical_label_distribution: no records");
  std::vector<double> dist(schema.label_count(), 0.0);
  for (const Record& r : records) dist[label_of(schema, r.attributes)] += 1.0;
  for (double& d : dist) d /= static_cast<double>(records.size());
  return dist;
}

}  // namespace dpsynth
