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

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpsynth/corpus.h"
#include "dpsynth/rng.h"

namespace dpsynth {

namespace {

constexpr const char* kBusinessType = "Business Type";
constexpr const char* kReviewStars = "Review Stars";

std::vector<double> product_weights(const std::vector<std::vector<double>>& marginals) {
  std::vector<double> out{1.0};
  for (const auto& m : marginals) {
    std::vector<double> next;
    next.reserve(out.size() * m.size());
    for (double a : out) {
      for (double b : m) next.push_back(a * b);
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace

CorpusProfile reviews_profile(bool uniform_labels) {
  const std::vector<std::string> categories = {
      "Restaurants",    "Bars",          "Shopping",          "Event Planning & Services", "Beauty & Spas",
      "Arts & Entertainment", "Hotels & Travel", "Health & Medical", "Grocery", "Home & Garden"};
  const std::vector<std::string> stars = {"1.0", "2.0", "3.0", "4.0", "5.0"};

  CorpusProfile p;
  p.name = uniform_labels ? "reviews-uniform" : "reviews";
  p.schema = AttributeSchema({{kBusinessType, categories}, {kReviewStars, stars}});
  if (uniform_labels) {
    p.label_weights.assign(p.schema.label_count(), 1.0);
  } else {
    p.label_weights = product_weights({{0.25, 0.10, 0.10, 0.05, 0.10, 0.06, 0.08, 0.08, 0.08, 0.10},
                                       {0.12, 0.09, 0.12, 0.25, 0.42}});
  }

  p.word_banks[kBusinessType] = {
      {"Restaurants", {"pasta", "burger", "steak", "waiter", "menu", "dessert", "appetizer", "brunch"}},
      {"Bars", {"cocktail", "bartender", "beer", "whiskey", "taproom", "jukebox", "margarita", "pub"}},
      {"Shopping", {"boutique", "dress", "shoes", "cashier", "mall", "jacket", "discount", "outlet"}},
      {"Event Planning & Services",
       {"wedding", "planner", "venue", "catering", "decorations", "photographer", "invitations", "banquet"}},
      {"Beauty & Spas", {"massage", "facial", "manicure", "salon", "stylist", "haircut", "pedicure", "sauna"}},
      {"Arts & Entertainment",
       {"museum", "theater", "concert", "exhibit", "show", "orchestra", "ballet", "gallery"}},
      {"Hotels & Travel", {"hotel", "suite", "lobby", "checkin", "shuttle", "concierge", "pool", "airport"}},
      {"Health & Medical", {"dentist", "doctor", "clinic", "nurse", "checkup", "appointment", "pharmacy", "therapist"}},
      {"Grocery", {"produce", "deli", "bakery", "checkout", "aisle", "groceries", "vegetables", "bread"}},
      {"Home & Garden", {"furniture", "plants", "lumber", "paint", "nursery", "hardware", "tiles", "lamps"}},
  };
  p.word_banks[kReviewStars] = {
      {"1.0", {"terrible", "awful", "horrible", "disgusting", "dreadful", "appalling"}},
      {"2.0", {"disappointing", "mediocre", "bland", "sloppy", "underwhelming", "subpar"}},
      {"3.0", {"okay", "average", "decent", "ordinary", "passable", "fair"}},
      {"4.0", {"good", "nice", "pleasant", "solid", "friendly", "tasty"}},
      {"5.0", {"amazing", "outstanding", "perfect", "incredible", "superb", "fantastic"}},
  };
  p.value_sentences[kReviewStars] = {
      {"1.0", {"we will never come back .", "avoid this place .", "worst visit in years ."}},
      {"2.0", {"probably not worth it .", "expected more for the price .", "would not rush back ."}},
      {"3.0", {"it was fine overall .", "nothing special but no complaints .", "maybe we will return ."}},
      {"4.0", {"we would come back .", "worth the trip .", "glad we stopped by ."}},
      {"5.0", {"highly recommend this place !", "best experience ever !", "we will be regulars !"}},
  };

  p.lead_templates = {
      "the {Business Type} was {Review Stars} .",
      "we tried the {Business Type} and it was {Review Stars} .",
      "honestly the {Business Type} here is {Review Stars} .",
      "{Review Stars} {Business Type} and {Review Stars} staff .",
  };
  p.templates = {
      "our {Business Type} visit was {Review Stars} .",
      "they also have a {Business Type} .",
      "the {Business Type} deserves a mention .",
      "staff were {Review Stars} .",
      "everything felt {Review Stars} today .",
      "the {Business Type} was {Review Stars} again .",
  };
  p.filler = {
      "we came on a weekday .",
      "parking was easy to find .",
      "the place was busy .",
      "we went with friends .",
      "it took a while to get in .",
      "the prices were as expected .",
      "there was music playing .",
      "we stayed for an hour .",
      "my sister suggested it .",
      "the location is downtown .",
      "we booked ahead of time .",
      "it was raining that day .",
  };
  p.filler_rate = 0.3;
  p.value_sentence_rate = 0.2;
  p.length = {18.0, 4, 10, 60};
  p.validate();
  return p;
}

CorpusProfile feedback_profile() {
  CorpusProfile p;
  p.name = "feedback";
  p.schema = AttributeSchema({{"Product", {"Mail", "Calendar", "Storage", "Chat"}},
                              {"Platform", {"Web", "Desktop", "Mobile"}},
                              {"Sentiment", {"Negative", "Neutral", "Positive"}}});
  p.label_weights = product_weights({{0.35, 0.2, 0.25, 0.2}, {0.4, 0.35, 0.25}, {0.45, 0.2, 0.35}});
  p.word_banks["Product"] = {
      {"Mail", {"inbox", "attachment", "folder", "signature", "spam"}},
      {"Calendar", {"meeting", "invite", "reminder", "schedule", "timezone"}},
      {"Storage", {"upload", "sync", "backup", "quota", "share"}},
      {"Chat", {"channel", "thread", "emoji", "mention", "call"}},
  };
  p.word_banks["Platform"] = {
      {"Web", {"browser", "tab", "website", "login"}},
      {"Desktop", {"installer", "window", "laptop", "shortcut"}},
      {"Mobile", {"phone", "app", "tablet", "notification"}},
  };
  p.word_banks["Sentiment"] = {
      {"Negative", {"broken", "slow", "confusing", "annoying", "unreliable"}},
      {"Neutral", {"usable", "standard", "adequate", "unchanged", "expected"}},
      {"Positive", {"fast", "intuitive", "reliable", "smooth", "delightful"}},
  };
  p.lead_templates = {
      "the {Product} on my {Platform} is {Sentiment} .",
      "using the {Platform} {Product} feels {Sentiment} .",
      "{Sentiment} {Product} experience on {Platform} .",
  };
  p.templates = {
      "the {Product} feature is {Sentiment} .",
      "my {Platform} setup is standard .",
      "the {Product} looks {Sentiment} lately .",
      "support said the {Platform} version is {Sentiment} .",
  };
  p.filler = {
      "i use it every day .", "this started last week .", "my team relies on it .",
      "i updated to the latest version .", "please keep improving it .", "thanks for reading .",
  };
  p.length = {14.0, 4, 8, 48};
  p.validate();
  return p;
}

CorpusProfile generic_profile(const AttributeSchema& schema, uint64_t seed) {
  static constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
  Rng rng(seed);
  auto pseudo_word = [&]() {
    std::string w;
    const int syllables = 2 + static_cast<int>(rng.uniform_int(2));
    for (int s = 0; s < syllables; ++s) {
      w += kOnsets[rng.uniform_int(std::size(kOnsets))];
      w += kVowels[rng.uniform_int(std::size(kVowels))];
    }
    return w;
  };

  CorpusProfile p;
  p.name = "generic";
  p.schema = schema;
  p.label_weights.assign(schema.label_count(), 1.0);
  std::string lead = "this one is";
  std::set<std::string> used;
  for (const Attribute& a : schema.attributes()) {
    for (const std::string& v : a.values) {
      auto& bank = p.word_banks[a.name][v];
      while (bank.size() < 4) {
        std::string w = pseudo_word();
        if (used.insert(w).second) bank.push_back(w);
      }
    }
    lead += " {" + a.name + "}";
    p.templates.push_back("also {" + a.name + "} here .");
  }
  lead += " .";
  p.lead_templates = {lead};
  p.filler = {"nothing else to add .", "that is all .", "it happened again ."};
  p.length = {std::max(12.0, static_cast<double>(schema.size() + 6)), 4, static_cast<int>(schema.size()) + 4,
              static_cast<int>(schema.size()) + 60};
  p.validate();
  return p;
}

CorpusProfile profile_by_name(std::string_view name) {
  if (name == "reviews") return reviews_profile(false);
  if (name == "reviews-uniform") return reviews_profile(true);
  if (name == "feedback") return feedback_profile();
  throw std::invalid_argument("unknown corpus profile: " + std::string(name));
}

}  // namespace dpsynth
