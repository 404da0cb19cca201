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

#include "dpsynth/canary_lab.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <set>
#include <stdexcept>

#include "dpsynth/parallel.h"

namespace dpsynth {
namespace {

constexpr std::array<std::string_view, 40> kFirstNames = {
    "Ansel",    "Bronwyn",  "Caspian",    "Delphine",  "Ezekiel", "Fenella",  "Gideon",    "Hester",
    "Ignatius", "Juniper",  "Lazarus",    "Marisol",   "Nikolai", "Odessa",   "Percival",  "Quentin",
    "Rosalind", "Sylvester", "Tamsin",    "Ulrich",    "Valentina", "Wendeline", "Xiomara", "Yannick",
    "Zephyr",   "Alaric",   "Beatrix",    "Cornelius", "Dagny",   "Evander",  "Florentine", "Gulliver",
    "Honora",   "Isidore",  "Jessamy",    "Leopold",   "Mirabel", "Octavian", "Perpetua",  "Rasmus"};

constexpr std::array<std::string_view, 30> kLastNames = {
    "Ashgrove",  "Blackwood",   "Cardew",     "Dunmore",   "Elwell",     "Fairbrother", "Gisborne", "Hartigan",
    "Ingleby",   "Jessop",      "Kettering",  "Lockridge", "Merriweather", "Northcott", "Oakhurst", "Pemberton",
    "Quarrington", "Rushworth", "Stannard",   "Thistlewood", "Underhill", "Vickery",    "Wetherby", "Yardley",
    "Zouch",     "Abernathy",   "Birtwistle", "Coldicott", "Dimmock",    "Fotheringham"};

constexpr std::array<std::string_view, 4> kDirections = {"N", "S", "E", "W"};

constexpr std::array<std::string_view, 16> kStreets = {
    "Larkspur", "Mossbank", "Quillfeather", "Thornapple", "Wrenfield", "Bramblecote", "Sedgewick", "Foxglove",
    "Alderbrook", "Hollowmere", "Kestrelridge", "Marlowe", "Nettlecombe", "Pinegrove", "Rookwood", "Tansy"};

constexpr std::array<std::string_view, 6> kSuffixes = {"Street", "Avenue", "Lane", "Road", "Boulevard", "Terrace"};

constexpr std::array<std::string_view, 12> kCities = {
    "Brindlewood", "Caldermoor", "Dunhallow", "Eastwick", "Fernhollow", "Glenmarrow",
    "Harrowgate",  "Ivybridge",  "Kilmarnock", "Lowenbury", "Millbrook", "Pennywhistle"};

constexpr std::array<std::string_view, 24> kHandles = {
    "kestrel", "marmot", "quokka", "tanager", "ocelot", "pangolin", "narwhal", "axolotl",
    "bittern", "caracal", "dunnock", "gecko",   "heron",  "ibis",     "jacana",  "kinkajou",
    "lemming", "magpie",  "numbat", "oriole",  "puffin", "quetzal",  "shrike",  "wombat"};

constexpr std::array<std::string_view, 10> kDomains = {"ferrow", "mailvane", "postlark", "inkwell", "quillbox",
                                                       "zephmail", "larkpost", "wirenest", "hollowmail", "sparrowbox"};

constexpr std::array<std::string_view, 4> kTlds = {"net", "org", "com", "io"};

template <size_t N>
std::string_view pick(const std::array<std::string_view, N>& words, Rng& rng) {
  return words[rng.uniform_int(N)];
}

char digit(Rng& rng) { return static_cast<char>('0' + rng.uniform_int(10)); }
char upper(Rng& rng) { return static_cast<char>('A' + rng.uniform_int(26)); }

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view to_string(CanaryType type) {
  switch (type) {
    case CanaryType::kName: return "name";
    case CanaryType::kAddress: return "address";
    case CanaryType::kNumber: return "number";
    case CanaryType::kEmail: return "email";
    case CanaryType::kPlate: return "plate";
  }
  return "unknown";
}

CanaryType canary_type_from_string(std::string_view name) {
  for (CanaryType t : {CanaryType::kName, CanaryType::kAddress, CanaryType::kNumber, CanaryType::kEmail,
                       CanaryType::kPlate}) {
    if (to_string(t) == name) return t;
  }
  throw std::invalid_argument("unknown canary type '" + std::string(name) + "'");
}

std::string DecoyGenerator::sample(Rng& rng) const {
  std::string s;
  switch (type_) {
    case CanaryType::kName:
      s.append(pick(kFirstNames, rng)).append(" ").append(pick(kLastNames, rng));
      break;
    case CanaryType::kAddress:
      for (int i = 0; i < 4; ++i) s.push_back(digit(rng));
      s.append(" ").append(pick(kDirections, rng)).append(" ").append(pick(kStreets, rng));
      s.append(" ").append(pick(kSuffixes, rng)).append(" ").append(pick(kCities, rng));
      break;
    case CanaryType::kNumber:
      for (int i = 0; i < 10; ++i) {
        if (i == 3 || i == 6) s.push_back('-');
        s.push_back(digit(rng));
      }
      break;
    case CanaryType::kEmail:
      s.append(pick(kHandles, rng));
      s.push_back(digit(rng));
      s.push_back(digit(rng));
      s.append("@").append(pick(kDomains, rng)).append(".").append(pick(kTlds, rng));
      break;
    case CanaryType::kPlate:
      s.push_back(upper(rng));
      s.push_back(digit(rng));
      s.push_back(digit(rng));
      s.push_back(upper(rng));
      s.push_back(digit(rng));
      s.push_back(digit(rng));
      break;
  }
  return s;
}

double DecoyGenerator::capacity() const {
  switch (type_) {
    case CanaryType::kName: return static_cast<double>(kFirstNames.size() * kLastNames.size());
    case CanaryType::kAddress:
      return 1e4 * static_cast<double>(kDirections.size() * kStreets.size() * kSuffixes.size() * kCities.size());
    case CanaryType::kNumber: return 1e10;
    case CanaryType::kEmail: return 100.0 * static_cast<double>(kHandles.size() * kDomains.size() * kTlds.size());
    case CanaryType::kPlate: return 26.0 * 26.0 * 1e4;
  }
  return 0.0;
}

size_t DecoyGenerator::token_count() const {
  switch (type_) {
    case CanaryType::kName: return 2;
    case CanaryType::kAddress: return 8;
    case CanaryType::kNumber: return 12;
    case CanaryType::kEmail: return 7;
    case CanaryType::kPlate: return 6;
  }
  return 0;
}

void CanarySpec::validate() const {
  const size_t first = template_text.find(kSecretSlot);
  if (first == std::string::npos || template_text.find(kSecretSlot, first + 1) != std::string::npos) {
    throw std::invalid_argument("canary template needs exactly one secret slot");
  }
  if (secret.empty()) throw std::invalid_argument("canary secret is empty");
}

std::string CanarySpec::fill(std::string_view value) const {
  std::string out = template_text;
  const size_t pos = out.find(kSecretSlot);
  if (pos == std::string::npos) throw std::invalid_argument("canary template has no secret slot");
  out.replace(pos, kSecretSlot.size(), value);
  return out;
}

Record CanarySpec::record() const {
  validate();
  return Record{attributes, fill(secret), RecordSource::kCanary};
}

namespace {

struct CanaryTemplate {
  CanaryType type;
  std::string_view text;
};

constexpr std::array<CanaryTemplate, 5> kTemplates = {{
    {CanaryType::kName, "our server tonight was {SECRET} and the service felt personal ."},
    {CanaryType::kAddress, "they moved the shop to {SECRET} right next to the station ."},
    {CanaryType::kNumber, "for bookings call the owner directly at {SECRET} after six ."},
    {CanaryType::kEmail, "complaints go to {SECRET} and they answer within a day ."},
    {CanaryType::kPlate, "the car with plate {SECRET} blocked the entrance again ."},
}};

}  // namespace

std::vector<CanarySpec> default_canaries(const AttributeSchema& schema, uint64_t seed) {
  if (schema.empty()) throw std::invalid_argument("default_canaries: empty schema");
  std::vector<CanarySpec> out;
  Rng label_rng(derive_seed(seed, "canary-labels"));
  for (size_t i = 0; i < kTemplates.size(); ++i) {
    Rng rng(derive_seed(seed, "canary-secret", i));
    CanarySpec spec;
    spec.type = kTemplates[i].type;
    spec.template_text = std::string(kTemplates[i].text);
    spec.secret = DecoyGenerator(spec.type).sample(rng);
    spec.attributes = attributes_for_label(schema, label_rng.uniform_int(schema.label_count()));
    out.push_back(std::move(spec));
  }
  return out;
}

std::vector<std::string> canary_vocabulary() {
  std::vector<std::string> words;
  auto add = [&](const auto& list) {
    for (std::string_view w : list) words.emplace_back(w);
  };
  add(kFirstNames);
  add(kLastNames);
  add(kDirections);
  add(kStreets);
  add(kSuffixes);
  add(kCities);
  add(kHandles);
  add(kDomains);
  add(kTlds);
  for (char c = '0'; c <= '9'; ++c) words.emplace_back(1, c);
  for (char c = 'A'; c <= 'Z'; ++c) words.emplace_back(1, c);
  words.emplace_back("-");
  words.emplace_back("@");
  words.emplace_back(".");
  for (const CanaryTemplate& t : kTemplates) {
    std::string text(t.text);
    const size_t pos = text.find(kSecretSlot);
    text.replace(pos, kSecretSlot.size(), " ");
    words.push_back(text);
  }
  return words;
}

std::vector<std::string> normalized_tokens(std::string_view text) {
  std::vector<std::string> out = split_words(text);
  for (std::string& w : out) w = lower(w);
  return out;
}

bool contains_span(std::span<const std::string> haystack, std::span<const std::string> needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

std::vector<bool> extraction_test(std::span<const Record> synthetic, std::span<const CanarySpec> canaries) {
  std::vector<std::vector<std::string>> secrets;
  for (const CanarySpec& c : canaries) secrets.push_back(normalized_tokens(c.secret));
  std::vector<bool> leaked(canaries.size(), false);
  for (const Record& r : synthetic) {
    const std::vector<std::string> tokens = normalized_tokens(r.text);
    for (size_t i = 0; i < secrets.size(); ++i) {
      if (!leaked[i] && contains_span(tokens, secrets[i])) leaked[i] = true;
    }
  }
  return leaked;
}

RankResult perplexity_rank(const ModelParams& params, const Vocabulary& vocab, const AttributeSchema& schema,
                           const CanarySpec& canary, size_t n_candidates, uint64_t seed, RankRegion region,
                           int num_threads) {
  canary.validate();
  if (n_candidates < 2) throw std::invalid_argument("perplexity_rank: need at least two candidates");
  const DecoyGenerator generator(canary.type);
  Rng rng(derive_seed(seed, "decoys"));
  RankResult result;
  result.candidates = n_candidates;
  result.secret_index = static_cast<size_t>(rng.uniform_int(n_candidates));

  std::vector<std::string> values(n_candidates);
  std::set<std::string> seen = {canary.secret};
  values[result.secret_index] = canary.secret;
  const size_t max_draws = 100 * n_candidates + 1000;
  size_t draws = 0;
  for (size_t i = 0; i < n_candidates; ++i) {
    if (i == result.secret_index) continue;
    for (;;) {
      if (++draws > max_draws) {
        throw std::runtime_error("perplexity_rank: decoy generator exhausted before " + std::to_string(n_candidates) +
                                 " distinct candidates");
      }
      std::string d = generator.sample(rng);
      if (seen.insert(d).second) {
        values[i] = std::move(d);
        break;
      }
    }
  }

  const std::string cc = render_control_code(schema, canary.attributes).rendered;
  const size_t context = static_cast<size_t>(params.config().context_length);
  const size_t slot = canary.template_text.find(kSecretSlot);
  const size_t prefix_words = split_words(canary.template_text.substr(0, slot)).size();
  result.perplexities.resize(n_candidates);
  parallel_for(n_candidates, num_threads, [&](size_t i) {
    const TokenSequence tokens = tokenize(cc, canary.fill(values[i]), vocab, context);
    if (region == RankRegion::kWholeSequence) {
      result.perplexities[i] = perplexity(params, tokens, ScoreRegion::kFull);
    } else {
      const size_t begin = separator_position(tokens) + 1 + prefix_words;
      const size_t end = std::min(tokens.size(), begin + split_words(values[i]).size());
      result.perplexities[i] = span_perplexity(params, tokens, begin, end);
    }
  });

  result.secret_perplexity = result.perplexities[result.secret_index];
  size_t rank = 1;
  for (size_t i = 0; i < n_candidates; ++i) {
    const double p = result.perplexities[i];
    if (p < result.secret_perplexity || (p == result.secret_perplexity && i < result.secret_index)) ++rank;
  }
  result.rank = rank;
  return result;
}

bool SubjectSpec::matches(std::string_view text) const {
  return contains_span(normalized_tokens(text), match_span);
}

void SubjectSpec::validate() const {
  if (match_span.empty()) throw std::invalid_argument("subject: empty match span");
  std::set<std::string> unique(paraphrases.begin(), paraphrases.end());
  if (unique.size() != paraphrases.size()) throw std::invalid_argument("subject: duplicate paraphrases");
  for (const std::string& p : paraphrases) {
    if (!matches(p)) throw std::invalid_argument("subject: paraphrase does not match: " + p);
  }
}

SubjectSpec default_subject() {
  SubjectSpec s;
  s.phrase = "beautiful paintings by Van Gogh in a restaurant";
  s.match_span = {"van", "gogh"};
  const std::array<std::string_view, 8> adjectives = {"beautiful", "stunning", "lovely", "gorgeous",
                                                      "striking",  "wonderful", "vivid", "charming"};
  const std::array<std::string_view, 5> works = {"paintings", "prints", "canvases", "artworks", "reproductions"};
  const std::array<std::string_view, 5> places = {"on the walls", "near the entrance", "above the bar",
                                                  "in the dining room", "along the hallway"};
  for (std::string_view a : adjectives) {
    for (std::string_view w : works) {
      for (std::string_view p : places) {
        const std::string as(a), ws(w), ps(p);
        s.paraphrases.push_back("there were " + as + " " + ws + " by Van Gogh " + ps + " .");
        s.paraphrases.push_back("we admired the " + as + " Van Gogh " + ws + " " + ps + " .");
        s.paraphrases.push_back(ps + " they hung " + as + " " + ws + " from Van Gogh .");
      }
    }
  }
  return s;
}

std::vector<Record> subject_records(const SubjectSpec& subject, size_t count, const AttributeMap& attributes,
                                    uint64_t seed) {
  if (count > subject.paraphrases.size()) {
    throw std::invalid_argument("subject_records: " + std::to_string(count) + " injections exceed the bank of " +
                                std::to_string(subject.paraphrases.size()) + " paraphrases");
  }
  std::vector<size_t> order(subject.paraphrases.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(seed, "subject-paraphrases"));
  rng.shuffle(order);
  std::vector<Record> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    out.push_back(Record{attributes, subject.paraphrases[order[i]], RecordSource::kCanary});
  }
  return out;
}

size_t count_matches(const SubjectSpec& subject, std::span<const Record> records) {
  size_t n = 0;
  for (const Record& r : records) n += subject.matches(r.text) ? 1 : 0;
  return n;
}

std::vector<SubjectResult> subject_experiment(const std::vector<Record>& corpus, const SubjectSpec& subject,
                                              std::span<const size_t> injection_counts,
                                              const AttributeMap& attributes, uint64_t seed,
                                              const TrainGenerateFn& train_and_generate) {
  subject.validate();
  std::vector<SubjectResult> results;
  for (size_t level = 0; level < injection_counts.size(); ++level) {
    const size_t count = injection_counts[level];
    std::vector<Record> training = corpus;
    if (count > 0) {
      const std::vector<Record> extra = subject_records(subject, count, attributes, derive_seed(seed, "level", level));
      training = inject_canaries(corpus, extra, 1, derive_seed(seed, "subject-inject", level));
    }
    const std::vector<Record> synthetic = train_and_generate(training, level);
    SubjectResult r;
    r.injected = count;
    r.injected_fraction = static_cast<double>(count) / static_cast<double>(training.size());
    r.matches = count_matches(subject, synthetic);
    r.synthetic_total = synthetic.size();
    r.synthetic_fraction = synthetic.empty() ? 0.0 : static_cast<double>(r.matches) / static_cast<double>(synthetic.size());
    results.push_back(r);
  }
  return results;
}

}  // namespace dpsynth
