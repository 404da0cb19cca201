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

#ifndef DPSYNTH_CORPUS_H_
#define DPSYNTH_CORPUS_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dpsynth {

struct Attribute {
  std::string name;
  std::vector<std::string> values;
};

// Ordered list of labeled attributes. The order fixes control-code rendering
// and the mixed-radix encoding of label tuples.
class AttributeSchema {
 public:
  AttributeSchema() = default;
  explicit AttributeSchema(std::vector<Attribute> attributes);

  const std::vector<Attribute>& attributes() const { return attributes_; }
  size_t size() const { return attributes_.size(); }
  bool empty() const { return attributes_.empty(); }

  std::optional<size_t> index_of(std::string_view name) const;
  std::optional<size_t> value_index(size_t attribute, std::string_view value) const;

  // Number of distinct label tuples (product of value counts).
  size_t label_count() const;
  std::vector<size_t> decode_label(size_t label) const;
  size_t encode_label(std::span<const size_t> value_indices) const;

  friend bool operator==(const AttributeSchema&, const AttributeSchema&);

 private:
  std::vector<Attribute> attributes_;
};

bool operator==(const Attribute& a, const Attribute& b);

using AttributeMap = std::map<std::string, std::string>;

enum class RecordSource { kOriginal, kCanary, kSynthetic };

std::string_view to_string(RecordSource source);
RecordSource record_source_from_string(std::string_view name);

// One labeled text sample; the unit of privacy. `text` holds the body only;
// the control code is derived from `attributes` at encoding time.
struct Record {
  AttributeMap attributes;
  std::string text;
  RecordSource source = RecordSource::kOriginal;
  // Synthetic records only.
  bool truncated = false;
  bool degenerate = false;

  friend bool operator==(const Record&, const Record&) = default;
};

// Throws std::invalid_argument when `record` does not conform to `schema`.
void validate_record(const AttributeSchema& schema, const Record& record);

size_t label_of(const AttributeSchema& schema, const AttributeMap& attributes);
AttributeMap attributes_for_label(const AttributeSchema& schema, size_t label);

struct ControlCode {
  std::string rendered;
  std::vector<std::string> values;  // schema order
};

// "Name1: v1 | Name2: v2 | ..." in schema order.
ControlCode render_control_code(const AttributeSchema& schema, const AttributeMap& attributes);
AttributeMap parse_control_code(const AttributeSchema& schema, std::string_view rendered);

// ---------------------------------------------------------------------------
// Tokenization

using TokenId = int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr size_t kDefaultMaxSequenceLength = 128;

// Splits on whitespace, then into letter runs (letters and apostrophes),
// decimal numbers ("5.0"), single digits, and single punctuation characters.
std::vector<std::string> split_words(std::string_view text);

// Closed word-level vocabulary. Ids are dense; ids 0-3 are BOS, EOS, PAD, SEP
// and id 4 is UNK.
class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kUnk = 4;
  static constexpr TokenId kNumReserved = 5;

  Vocabulary();

  // Vocabulary over the words of `texts`, in first-appearance order.
  static Vocabulary build(std::span<const std::string> texts);

  TokenId add(std::string_view token);
  TokenId id(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;
  const std::string& token(TokenId id) const;
  size_t size() const { return tokens_.size(); }
  bool is_reserved(TokenId id) const { return id >= 0 && id < kNumReserved; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

TokenSequence encode_words(std::string_view text, const Vocabulary& vocab);

// [BOS, control-code tokens, SEP, body tokens, EOS], truncated to max_len.
TokenSequence tokenize(std::string_view control_code, std::string_view body, const Vocabulary& vocab,
                       size_t max_len = kDefaultMaxSequenceLength);

TokenSequence encode_record(const AttributeSchema& schema, const Record& record, const Vocabulary& vocab,
                            size_t max_len = kDefaultMaxSequenceLength);

// Position of the first SEP, or the sequence size when absent.
size_t separator_position(std::span<const TokenId> tokens);

// Space-joined tokens; reserved tokens other than UNK are skipped.
std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Synthetic corpus profiles

// Truncated negative binomial over body lengths (in tokens).
struct LengthModel {
  double mean = 18.0;
  int dispersion = 4;
  int min_length = 8;
  int max_length = 60;
};

// Label-correlated phrase generator standing in for a real review corpus.
// Templates contain slots "{Attribute Name}" filled from `word_banks` for the
// record's value of that attribute.
struct CorpusProfile {
  std::string name;
  AttributeSchema schema;
  // Unnormalized weights over label tuples, indexed by AttributeSchema::encode_label.
  std::vector<double> label_weights;
  // Sentences that carry every attribute; each body starts with one.
  std::vector<std::string> lead_templates;
  std::vector<std::string> templates;
  // attribute -> value -> words.
  std::map<std::string, std::map<std::string, std::vector<std::string>>> word_banks;
  // attribute -> value -> whole sentences.
  std::map<std::string, std::map<std::string, std::vector<std::string>>> value_sentences;
  std::vector<std::string> filler;
  double filler_rate = 0.3;
  double value_sentence_rate = 0.2;
  LengthModel length;

  // Throws std::invalid_argument when slots or banks do not cover the schema.
  void validate() const;

  // Every text fragment the profile can emit, including rendered control codes.
  std::vector<std::string> fragments() const;

  std::vector<double> label_distribution() const;
};

// Yelp-like profile: 10 business categories x 5 star ratings.
CorpusProfile reviews_profile(bool uniform_labels = false);
// Product-feedback profile with three attributes.
CorpusProfile feedback_profile();
// Profile for an arbitrary schema using generated pseudo-words.
CorpusProfile generic_profile(const AttributeSchema& schema, uint64_t seed = 1);
// Looks up a built-in profile by name ("reviews", "reviews-uniform", "feedback").
CorpusProfile profile_by_name(std::string_view name);

std::vector<Record> generate_corpus(const AttributeSchema& schema, size_t n, uint64_t seed,
                                    const CorpusProfile& profile);

// Inserts every canary `repetitions` times at seeded random positions. The
// relative order of the original records is preserved.
std::vector<Record> inject_canaries(const std::vector<Record>& corpus, const std::vector<Record>& canaries,
                                    size_t repetitions, uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset files: one JSON object per line {attributes, text[, source, truncated]}.

std::string record_to_json_line(const AttributeSchema* schema, const Record& record);
Record record_from_json_line(std::string_view line);
void write_records(const std::filesystem::path& path, const AttributeSchema* schema,
                   const std::vector<Record>& records);
std::vector<Record> read_records(const std::filesystem::path& path);

AttributeSchema schema_from_json_file(const std::filesystem::path& path, std::string* profile_name = nullptr);

}  // namespace dpsynth

#endif  // DPSYNTH_CORPUS_H_
