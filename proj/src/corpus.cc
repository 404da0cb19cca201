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

#include "dpsynth/corpus.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "dpsynth/rng.h"
#include "json.hpp"

namespace dpsynth {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string trim(std::string_view s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool is_letter(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '\''; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)); }

}  // namespace

// ---------------------------------------------------------------------------
// AttributeSchema

bool operator==(const Attribute& a, const Attribute& b) { return a.name == b.name && a.values == b.values; }

bool operator==(const AttributeSchema& a, const AttributeSchema& b) { return a.attributes_ == b.attributes_; }

AttributeSchema::AttributeSchema(std::vector<Attribute> attributes) : attributes_(std::move(attributes)) {
  if (attributes_.empty()) throw std::invalid_argument("schema has no attributes");
  std::set<std::string> names;
  for (const Attribute& a : attributes_) {
    if (a.name.empty()) throw std::invalid_argument("attribute with empty name");
    if (a.name.find_first_of(":|") != std::string::npos) {
      throw std::invalid_argument("attribute name contains a control-code delimiter: " + a.name);
    }
    if (!names.insert(a.name).second) throw std::invalid_argument("duplicate attribute name: " + a.name);
    if (a.values.empty()) throw std::invalid_argument("attribute has no values: " + a.name);
    std::set<std::string> seen;
    for (const std::string& v : a.values) {
      if (v.empty() || v.find('|') != std::string::npos || trim(v) != v) {
        throw std::invalid_argument("invalid value for attribute " + a.name + ": '" + v + "'");
      }
      if (!seen.insert(v).second) throw std::invalid_argument("duplicate value " + v + " in " + a.name);
    }
  }
}

std::optional<size_t> AttributeSchema::index_of(std::string_view name) const {
  for (size_t i = 0; i < attributes_.size(); ++i) {
    if (attributes_[i].name == name) return i;
  }
  return std::nullopt;
}

std::optional<size_t> AttributeSchema::value_index(size_t attribute, std::string_view value) const {
  const auto& values = attributes_.at(attribute).values;
  for (size_t i = 0; i < values.size(); ++i) {
    if (values[i] == value) return i;
  }
  return std::nullopt;
}

size_t AttributeSchema::label_count() const {
  if (attributes_.empty()) return 0;
  size_t n = 1;
  for (const Attribute& a : attributes_) n *= a.values.size();
  return n;
}

// Mixed radix with the last attribute varying fastest.
std::vector<size_t> AttributeSchema::decode_label(size_t label) const {
  if (label >= label_count()) throw std::out_of_range("label index out of range");
  std::vector<size_t> out(attributes_.size());
  for (size_t i = attributes_.size(); i-- > 0;) {
    const size_t radix = attributes_[i].values.size();
    out[i] = label % radix;
    label /= radix;
  }
  return out;
}

size_t AttributeSchema::encode_label(std::span<const size_t> value_indices) const {
  if (value_indices.size() != attributes_.size()) throw std::invalid_argument("label arity mismatch");
  size_t label = 0;
  for (size_t i = 0; i < attributes_.size(); ++i) {
    if (value_indices[i] >= attributes_[i].values.size()) throw std::out_of_range("value index out of range");
    label = label * attributes_[i].values.size() + value_indices[i];
  }
  return label;
}

std::string_view to_string(RecordSource source) {
  switch (source) {
    case RecordSource::kOriginal:
      return "original";
    case RecordSource::kCanary:
      return "canary";
    case RecordSource::kSynthetic:
      return "synthetic";
  }
  return "original";
}

RecordSource record_source_from_string(std::string_view name) {
  if (name == "original") return RecordSource::kOriginal;
  if (name == "canary") return RecordSource::kCanary;
  if (name == "synthetic") return RecordSource::kSynthetic;
  throw std::invalid_argument("unknown record source: " + std::string(name));
}

void validate_record(const AttributeSchema& schema, const Record& record) {
  for (const Attribute& a : schema.attributes()) {
    auto it = record.attributes.find(a.name);
    if (it == record.attributes.end()) throw std::invalid_argument("record is missing attribute " + a.name);
    if (std::find(a.values.begin(), a.values.end(), it->second) == a.values.end()) {
      throw std::invalid_argument("record has unknown value '" + it->second + "' for " + a.name);
    }
  }
  if (record.attributes.size() != schema.size()) throw std::invalid_argument("record has extra attributes");
}

size_t label_of(const AttributeSchema& schema, const AttributeMap& attributes) {
  std::vector<size_t> idx(schema.size());
  for (size_t i = 0; i < schema.size(); ++i) {
    const std::string& name = schema.attributes()[i].name;
    auto it = attributes.find(name);
    if (it == attributes.end()) throw std::invalid_argument("missing attribute " + name);
    auto v = schema.value_index(i, it->second);
    if (!v) throw std::invalid_argument("unknown value '" + it->second + "' for " + name);
    idx[i] = *v;
  }
  return schema.encode_label(idx);
}

AttributeMap attributes_for_label(const AttributeSchema& schema, size_t label) {
  const std::vector<size_t> idx = schema.decode_label(label);
  AttributeMap out;
  for (size_t i = 0; i < schema.size(); ++i) {
    out[schema.attributes()[i].name] = schema.attributes()[i].values[idx[i]];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Control codes

ControlCode render_control_code(const AttributeSchema& schema, const AttributeMap& attributes) {
  ControlCode code;
  for (const Attribute& a : schema.attributes()) {
    auto it = attributes.find(a.name);
    if (it == attributes.end()) throw std::invalid_argument("control code is missing attribute " + a.name);
    if (!code.rendered.empty()) code.rendered += " | ";
    code.rendered += a.name;
    code.rendered += ": ";
    code.rendered += it->second;
    code.values.push_back(it->second);
  }
  return code;
}

AttributeMap parse_control_code(const AttributeSchema& schema, std::string_view rendered) {
  AttributeMap out;
  size_t field = 0;
  size_t pos = 0;
  while (pos <= rendered.size()) {
    size_t bar = rendered.find('|', pos);
    if (bar == std::string_view::npos) bar = rendered.size();
    const std::string part = trim(rendered.substr(pos, bar - pos));
    if (field >= schema.size()) throw std::invalid_argument("control code has too many fields");
    const Attribute& a = schema.attributes()[field];
    const std::string prefix = a.name + ":";
    if (part.rfind(prefix, 0) != 0) throw std::invalid_argument("expected attribute " + a.name + " in control code");
    out[a.name] = trim(std::string_view(part).substr(prefix.size()));
    ++field;
    pos = bar + 1;
  }
  if (field != schema.size()) throw std::invalid_argument("control code has too few fields");
  return out;
}

// ---------------------------------------------------------------------------
// Tokenization

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  size_t i = 0;
  const size_t n = text.size();
  while (i < n) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (is_letter(c)) {
      size_t j = i;
      while (j < n && is_letter(text[j])) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else if (is_digit(c)) {
      // "5.0" stays whole; any other digit run splits into single digits.
      size_t j = i;
      while (j < n && is_digit(text[j])) ++j;
      if (j + 1 < n && text[j] == '.' && is_digit(text[j + 1])) {
        size_t k = j + 1;
        while (k < n && is_digit(text[k])) ++k;
        out.emplace_back(text.substr(i, k - i));
        i = k;
      } else {
        out.emplace_back(1, c);
        ++i;
      }
    } else {
      // One UTF-8 code point per punctuation token.
      size_t len = 1;
      const auto uc = static_cast<unsigned char>(c);
      if (uc >= 0xF0) {
        len = 4;
      } else if (uc >= 0xE0) {
        len = 3;
      } else if (uc >= 0xC0) {
        len = 2;
      }
      len = std::min(len, n - i);
      out.emplace_back(text.substr(i, len));
      i += len;
    }
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* special : {"<bos>", "<eos>", "<pad>", "<sep>", "<unk>"}) add(special);
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  Vocabulary vocab;
  for (const std::string& text : texts) {
    for (const std::string& w : split_words(text)) vocab.add(w);
  }
  return vocab;
}

TokenId Vocabulary::add(std::string_view token) {
  auto it = ids_.find(std::string(token));
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  ids_.emplace(tokens_.back(), id);
  return id;
}

TokenId Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<size_t>(id) >= tokens_.size()) throw std::out_of_range("token id out of range");
  return tokens_[static_cast<size_t>(id)];
}

TokenSequence encode_words(std::string_view text, const Vocabulary& vocab) {
  TokenSequence out;
  for (const std::string& w : split_words(text)) out.push_back(vocab.id(w));
  return out;
}

TokenSequence tokenize(std::string_view control_code, std::string_view body, const Vocabulary& vocab,
                       size_t max_len) {
  TokenSequence out;
  out.push_back(Vocabulary::kBos);
  for (TokenId t : encode_words(control_code, vocab)) out.push_back(t);
  out.push_back(Vocabulary::kSep);
  for (TokenId t : encode_words(body, vocab)) out.push_back(t);
  out.push_back(Vocabulary::kEos);
  if (out.size() > max_len) out.resize(max_len);
  return out;
}

TokenSequence encode_record(const AttributeSchema& schema, const Record& record, const Vocabulary& vocab,
                            size_t max_len) {
  return tokenize(render_control_code(schema, record.attributes).rendered, record.text, vocab, max_len);
}

size_t separator_position(std::span<const TokenId> tokens) {
  auto it = std::find(tokens.begin(), tokens.end(), Vocabulary::kSep);
  return static_cast<size_t>(it - tokens.begin());
}

std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  std::string out;
  for (TokenId t : tokens) {
    if (vocab.is_reserved(t) && t != Vocabulary::kUnk) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus generation

namespace {

struct Slot {
  size_t begin;
  size_t end;  // one past '}'
  std::string attribute;
};

std::vector<Slot> find_slots(const std::string& tmpl) {
  std::vector<Slot> slots;
  size_t pos = 0;
  while ((pos = tmpl.find('{', pos)) != std::string::npos) {
    const size_t close = tmpl.find('}', pos);
    if (close == std::string::npos) throw std::invalid_argument("unterminated slot in template: " + tmpl);
    slots.push_back({pos, close + 1, tmpl.substr(pos + 1, close - pos - 1)});
    pos = close + 1;
  }
  return slots;
}

std::string fill_template(const CorpusProfile& profile, const std::string& tmpl, const AttributeMap& attrs,
                          Rng& rng) {
  std::string out;
  size_t last = 0;
  for (const Slot& slot : find_slots(tmpl)) {
    out.append(tmpl, last, slot.begin - last);
    const auto& bank = profile.word_banks.at(slot.attribute).at(attrs.at(slot.attribute));
    out += bank[rng.uniform_int(bank.size())];
    last = slot.end;
  }
  out.append(tmpl, last, std::string::npos);
  return out;
}

int sample_length(const LengthModel& m, Rng& rng) {
  const double p = m.dispersion / (m.dispersion + m.mean);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const int64_t len = rng.negative_binomial(m.dispersion, p);
    if (len >= m.min_length && len <= m.max_length) return static_cast<int>(len);
  }
  return std::clamp(static_cast<int>(m.mean), m.min_length, m.max_length);
}

std::string strip_slots(const std::string& tmpl) {
  std::string out;
  size_t last = 0;
  for (const Slot& s : find_slots(tmpl)) {
    out.append(tmpl, last, s.begin - last);
    out += ' ';
    last = s.end;
  }
  out.append(tmpl, last, std::string::npos);
  return out;
}

size_t max_template_words(const CorpusProfile& profile, const std::string& tmpl) {
  size_t total = split_words(strip_slots(tmpl)).size();
  for (const Slot& s : find_slots(tmpl)) {
    size_t longest = 0;
    for (const auto& [value, words] : profile.word_banks.at(s.attribute)) {
      for (const std::string& w : words) longest = std::max(longest, split_words(w).size());
    }
    total += longest;
  }
  return total;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const std::string& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

void CorpusProfile::validate() const {
  if (schema.empty()) throw std::invalid_argument("profile schema is empty");
  if (label_weights.size() != schema.label_count()) {
    throw std::invalid_argument("profile label weights do not match the schema");
  }
  double total = 0.0;
  for (double w : label_weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("negative label weight");
    total += w;
  }
  if (!(total > 0.0)) throw std::invalid_argument("label weights have no mass");
  if (lead_templates.empty()) throw std::invalid_argument("profile has no lead templates");
  auto check_template = [&](const std::string& t, bool lead) {
    std::set<std::string> seen;
    for (const Slot& s : find_slots(t)) {
      auto idx = schema.index_of(s.attribute);
      if (!idx) throw std::invalid_argument("template slot names unknown attribute: " + s.attribute);
      auto bank = word_banks.find(s.attribute);
      if (bank == word_banks.end()) throw std::invalid_argument("no word bank for " + s.attribute);
      for (const std::string& v : schema.attributes()[*idx].values) {
        auto words = bank->second.find(v);
        if (words == bank->second.end() || words->second.empty()) {
          throw std::invalid_argument("empty word bank for " + s.attribute + "=" + v);
        }
      }
      seen.insert(s.attribute);
    }
    if (lead && seen.size() != schema.size()) {
      throw std::invalid_argument("lead template does not cover every attribute: " + t);
    }
  };
  for (const std::string& t : lead_templates) {
    check_template(t, true);
    // A lead sentence must survive truncation to the minimum body length.
    if (max_template_words(*this, t) > static_cast<size_t>(length.min_length)) {
      throw std::invalid_argument("lead template can exceed the minimum body length: " + t);
    }
  }
  for (const std::string& t : templates) check_template(t, false);
  if (length.min_length < 1 || length.max_length < length.min_length || length.dispersion < 1 ||
      !(length.mean > 0.0)) {
    throw std::invalid_argument("invalid length model");
  }
}

std::vector<std::string> CorpusProfile::fragments() const {
  std::vector<std::string> out;
  for (size_t label = 0; label < schema.label_count(); ++label) {
    out.push_back(render_control_code(schema, attributes_for_label(schema, label)).rendered);
  }
  for (const std::string& t : lead_templates) out.push_back(strip_slots(t));
  for (const std::string& t : templates) out.push_back(strip_slots(t));
  for (const auto& [attr, banks] : word_banks) {
    for (const auto& [value, words] : banks) out.insert(out.end(), words.begin(), words.end());
  }
  for (const auto& [attr, banks] : value_sentences) {
    for (const auto& [value, sentences] : banks) out.insert(out.end(), sentences.begin(), sentences.end());
  }
  out.insert(out.end(), filler.begin(), filler.end());
  return out;
}

std::vector<double> CorpusProfile::label_distribution() const {
  double total = 0.0;
  for (double w : label_weights) total += w;
  std::vector<double> out(label_weights.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = label_weights[i] / total;
  return out;
}

std::vector<Record> generate_corpus(const AttributeSchema& schema, size_t n, uint64_t seed,
                                    const CorpusProfile& profile) {
  if (schema.empty()) throw std::invalid_argument("generate_corpus: empty schema");
  if (n == 0) throw std::invalid_argument("generate_corpus: n must be positive");
  if (!(schema == profile.schema)) throw std::invalid_argument("generate_corpus: profile does not match schema");
  profile.validate();

  Rng rng(seed);
  std::vector<Record> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    Record rec;
    rec.attributes = attributes_for_label(schema, rng.categorical(profile.label_weights));
    const int target = sample_length(profile.length, rng);

    const std::string& lead = profile.lead_templates[rng.uniform_int(profile.lead_templates.size())];
    std::vector<std::string> words = split_words(fill_template(profile, lead, rec.attributes, rng));
    while (words.size() < static_cast<size_t>(target)) {
      const double u = rng.uniform();
      std::string sentence;
      if (u < profile.filler_rate && !profile.filler.empty()) {
        sentence = profile.filler[rng.uniform_int(profile.filler.size())];
      } else if (u < profile.filler_rate + profile.value_sentence_rate && !profile.value_sentences.empty()) {
        auto it = profile.value_sentences.begin();
        std::advance(it, static_cast<long>(rng.uniform_int(profile.value_sentences.size())));
        const auto bank = it->second.find(rec.attributes.at(it->first));
        if (bank != it->second.end() && !bank->second.empty()) {
          sentence = bank->second[rng.uniform_int(bank->second.size())];
        }
      } else if (!profile.templates.empty()) {
        sentence = fill_template(profile, profile.templates[rng.uniform_int(profile.templates.size())],
                                 rec.attributes, rng);
      }
      if (sentence.empty()) sentence = fill_template(profile, lead, rec.attributes, rng);
      for (std::string& w : split_words(sentence)) words.push_back(std::move(w));
    }
    words.resize(static_cast<size_t>(target));
    rec.text = join_words(words);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<Record> inject_canaries(const std::vector<Record>& corpus, const std::vector<Record>& canaries,
                                    size_t repetitions, uint64_t seed) {
  if (repetitions == 0) throw std::invalid_argument("inject_canaries: repetitions must be positive");
  const size_t extra = canaries.size() * repetitions;
  const size_t total = corpus.size() + extra;

  // Slot kinds: true marks a canary position.
  std::vector<char> is_canary(total, 0);
  std::fill(is_canary.begin(), is_canary.begin() + static_cast<long>(extra), 1);
  Rng rng(seed);
  rng.shuffle(is_canary);

  std::vector<size_t> canary_order;
  canary_order.reserve(extra);
  for (size_t r = 0; r < repetitions; ++r) {
    for (size_t c = 0; c < canaries.size(); ++c) canary_order.push_back(c);
  }
  rng.shuffle(canary_order);

  std::vector<Record> out;
  out.reserve(total);
  size_t next_original = 0;
  size_t next_canary = 0;
  for (size_t i = 0; i < total; ++i) {
    if (is_canary[i]) {
      out.push_back(canaries[canary_order[next_canary++]]);
    } else {
      out.push_back(corpus[next_original++]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files

std::string record_to_json_line(const AttributeSchema* schema, const Record& record) {
  ordered_json j;
  ordered_json attrs = ordered_json::object();
  if (schema != nullptr) {
    for (const Attribute& a : schema->attributes()) {
      auto it = record.attributes.find(a.name);
      if (it != record.attributes.end()) attrs[a.name] = it->second;
    }
  }
  for (const auto& [k, v] : record.attributes) {
    if (!attrs.contains(k)) attrs[k] = v;
  }
  j["attributes"] = std::move(attrs);
  j["text"] = record.text;
  if (record.source != RecordSource::kOriginal) j["source"] = std::string(to_string(record.source));
  if (record.source == RecordSource::kSynthetic) {
    j["truncated"] = record.truncated;
    if (record.degenerate) j["degenerate"] = true;
  }
  return j.dump();
}

Record record_from_json_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  Record rec;
  for (const auto& [k, v] : j.at("attributes").items()) rec.attributes[k] = v.get<std::string>();
  rec.text = j.at("text").get<std::string>();
  if (j.contains("source")) rec.source = record_source_from_string(j["source"].get<std::string>());
  rec.truncated = j.value("truncated", false);
  rec.degenerate = j.value("degenerate", false);
  return rec;
}

void write_records(const std::filesystem::path& path, const AttributeSchema* schema,
                   const std::vector<Record>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const Record& r : records) out << record_to_json_line(schema, r) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Record> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Record> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(record_from_json_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

AttributeSchema schema_from_json_file(const std::filesystem::path& path, std::string* profile_name) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open schema " + path.string());
  const auto j = nlohmann::json::parse(in);
  std::vector<Attribute> attrs;
  for (const auto& a : j.at("attributes")) {
    attrs.push_back({a.at("name").get<std::string>(), a.at("values").get<std::vector<std::string>>()});
  }
  if (profile_name != nullptr) *profile_name = j.value("profile", std::string());
  return AttributeSchema(std::move(attrs));
}

}  // namespace dpsynth
