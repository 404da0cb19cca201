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

#ifndef DPSYNTH_CANARY_LAB_H_
#define DPSYNTH_CANARY_LAB_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpsynth/corpus.h"
#include "dpsynth/language_model.h"
#include "dpsynth/rng.h"

namespace dpsynth {

enum class CanaryType { kName, kAddress, kNumber, kEmail, kPlate };

std::string_view to_string(CanaryType type);
CanaryType canary_type_from_string(std::string_view name);

// Fixed-shape secrets built from word lists that no corpus profile uses.
class DecoyGenerator {
 public:
  explicit DecoyGenerator(CanaryType type) : type_(type) {}

  std::string sample(Rng& rng) const;
  // Number of distinct values the generator can produce.
  double capacity() const;
  // Token count of every generated value.
  size_t token_count() const;
  CanaryType type() const { return type_; }

 private:
  CanaryType type_;
};

inline constexpr std::string_view kSecretSlot = "{SECRET}";

struct CanarySpec {
  CanaryType type = CanaryType::kName;
  std::string template_text;  // exactly one kSecretSlot
  std::string secret;
  AttributeMap attributes;

  void validate() const;
  std::string fill(std::string_view value) const;
  Record record() const;
};

// Five canaries (one per type) with secrets drawn from the seed.
std::vector<CanarySpec> default_canaries(const AttributeSchema& schema, uint64_t seed);

// Every word the decoy generators and the default templates can emit.
std::vector<std::string> canary_vocabulary();

// Lower-cased token sequence used for matching.
std::vector<std::string> normalized_tokens(std::string_view text);
bool contains_span(std::span<const std::string> haystack, std::span<const std::string> needle);

// leaked[i] is true iff canaries[i].secret occurs as a token span in a record.
std::vector<bool> extraction_test(std::span<const Record> synthetic, std::span<const CanarySpec> canaries);

enum class RankRegion { kWholeSequence, kSecretSpan };

struct RankResult {
  size_t rank = 0;
  size_t candidates = 0;
  size_t secret_index = 0;
  double secret_perplexity = 0.0;
  // Perplexity of every candidate in index order (the secret included).
  std::vector<double> perplexities;
};

// Scores the canary filled with its secret and with n_candidates - 1 distinct
// decoys. rank = 1 + #{strictly lower perplexity} + #{equal perplexity at a
// lower index}. Throws std::runtime_error when the generator cannot supply
// enough distinct decoys.
RankResult perplexity_rank(const ModelParams& params, const Vocabulary& vocab, const AttributeSchema& schema,
                           const CanarySpec& canary, size_t n_candidates, uint64_t seed,
                           RankRegion region = RankRegion::kWholeSequence, int num_threads = 1);

struct SubjectSpec {
  std::string phrase;
  std::vector<std::string> paraphrases;
  // Lower-cased token span that marks an appearance.
  std::vector<std::string> match_span;

  bool matches(std::string_view text) const;
  void validate() const;
};

// "Van Gogh" paintings in a restaurant, as a combinatorial paraphrase bank.
SubjectSpec default_subject();

// `count` records carrying distinct paraphrases chosen with the seed.
std::vector<Record> subject_records(const SubjectSpec& subject, size_t count, const AttributeMap& attributes,
                                    uint64_t seed);

size_t count_matches(const SubjectSpec& subject, std::span<const Record> records);

struct SubjectResult {
  size_t injected = 0;
  double injected_fraction = 0.0;
  size_t matches = 0;
  size_t synthetic_total = 0;
  double synthetic_fraction = 0.0;
};

// Trains on `corpus` and returns synthetic records; `level` is the position in
// the injection-count list.
using TrainGenerateFn = std::function<std::vector<Record>(const std::vector<Record>& training, size_t level)>;

std::vector<SubjectResult> subject_experiment(const std::vector<Record>& corpus, const SubjectSpec& subject,
                                              std::span<const size_t> injection_counts,
                                              const AttributeMap& attributes, uint64_t seed,
                                              const TrainGenerateFn& train_and_generate);

}  // namespace dpsynth

#endif  // DPSYNTH_CANARY_LAB_H_
