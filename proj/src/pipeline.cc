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

#include "dpsynth/pipeline.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dpsynth/canary_lab.h"
#include "dpsynth/rng.h"
#include "json.hpp"

namespace dpsynth {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Reads an object's keys into typed fields and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ordered_json spend_json(const std::optional<PrivacySpend>& spend) {
  if (!spend) return nullptr;
  ordered_json j;
  j["epsilon"] = std::isfinite(spend->epsilon) ? ordered_json(spend->epsilon) : ordered_json("inf");
  j["delta"] = spend->delta;
  j["accountant"] = spend->accountant_name;
  j["optimal_order"] = spend->optimal_order ? ordered_json(*spend->optimal_order) : ordered_json(nullptr);
  return j;
}

std::optional<PrivacySpend> spend_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  PrivacySpend s;
  const json& e = j.at("epsilon");
  s.epsilon = e.is_string() ? std::numeric_limits<double>::infinity() : e.get<double>();
  s.delta = j.at("delta").get<double>();
  s.accountant_name = j.at("accountant").get<std::string>();
  if (!j.at("optimal_order").is_null()) s.optimal_order = j.at("optimal_order").get<double>();
  return s;
}

ExperimentConfig arm_config(ExperimentConfig config, bool dp) {
  config.training.dp = dp;
  return config;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  ObjectReader top(root, "config");
  top.get("name", c.name);
  top.get("seed", c.seed);
  top.get("deterministic", c.deterministic);
  top.get("threads", c.threads);
  if (const json* j = top.child("corpus")) {
    ObjectReader r(*j, "corpus");
    r.get("profile", c.corpus.profile);
    r.get("size", c.corpus.size);
    r.get("validation_size", c.corpus.validation_size);
    r.get("test_size", c.corpus.test_size);
    r.finish();
  }
  if (const json* j = top.child("model")) {
    ObjectReader r(*j, "model");
    r.get("context_length", c.model.context_length);
    r.get("d_model", c.model.d_model);
    r.get("n_layers", c.model.n_layers);
    r.get("n_heads", c.model.n_heads);
    r.get("ff_dim", c.model.ff_dim);
    r.finish();
  }
  if (const json* j = top.child("training")) {
    ObjectReader r(*j, "training");
    TrainingSection& t = c.training;
    r.get("dp", t.dp);
    if (const json* e = r.child("target_epsilon")) {
      if (e->is_null()) {
        t.target_epsilon.reset();
      } else if (e->is_number()) {
        t.target_epsilon = e->get<double>();
      } else {
        throw ConfigError("training.target_epsilon: expected a number or null");
      }
    }
    r.get("noise_multiplier", t.noise_multiplier);
    if (const json* d = r.child("delta")) {
      if (d->is_string() && d->get<std::string>() == "auto") {
        t.delta.reset();
      } else if (d->is_number()) {
        t.delta = d->get<double>();
      } else {
        throw ConfigError("training.delta: expected a number or \"auto\"");
      }
    }
    r.get("clip_norm", t.clip_norm);
    r.get("batch_size", t.batch_size);
    r.get("epochs", t.epochs);
    r.get("learning_rate", t.learning_rate);
    std::string optimizer(to_string(t.optimizer));
    r.get("optimizer", optimizer);
    try {
      t.optimizer = optimizer_from_string(optimizer);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("training.optimizer: ") + e.what());
    }
    r.get("eval_interval", t.eval_interval);
    r.get("include_control_code", t.include_control_code);
    r.get("non_private_batch_size", t.non_private_batch_size);
    r.get("non_private_epochs", t.non_private_epochs);
    r.get("non_private_learning_rate", t.non_private_learning_rate);
    r.finish();
  }
  if (const json* j = top.child("decoding")) {
    ObjectReader r(*j, "decoding");
    r.get("top_k", c.decoding.top_k);
    r.get("top_p", c.decoding.top_p);
    r.get("temperature", c.decoding.temperature);
    r.get("max_new_tokens", c.decoding.max_new_tokens);
    r.get("total", c.decoding.total);
    r.finish();
  }
  if (const json* j = top.child("evaluation")) {
    ObjectReader r(*j, "evaluation");
    r.get("enabled", c.evaluation.enabled);
    r.get("downstream", c.evaluation.downstream);
    r.get("distribution", c.evaluation.distribution);
    r.get("lengths", c.evaluation.lengths);
    r.get("original_baseline", c.evaluation.original_baseline);
    r.get("metric_sample", c.evaluation.metric_sample);
    r.finish();
  }
  if (const json* j = top.child("canary")) {
    ObjectReader r(*j, "canary");
    r.get("enabled", c.canary.enabled);
    r.get("repetitions", c.canary.repetitions);
    r.get("candidates", c.canary.candidates);
    r.get("span_region", c.canary.span_region);
    r.get("subject_count", c.canary.subject_count);
    r.get("subject_attributes", c.canary.subject_attributes);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return from_json(read_text(path));
}

std::string ExperimentConfig::to_json() const {
  ordered_json j;
  j["name"] = name;
  j["seed"] = seed;
  j["deterministic"] = deterministic;
  j["threads"] = threads;
  j["corpus"] = {{"profile", corpus.profile},
                 {"size", corpus.size},
                 {"validation_size", corpus.validation_size},
                 {"test_size", corpus.test_size}};
  j["model"] = {{"context_length", model.context_length}, {"d_model", model.d_model}, {"n_layers", model.n_layers},
                {"n_heads", model.n_heads}, {"ff_dim", model.ff_dim}};
  ordered_json t;
  t["dp"] = training.dp;
  t["target_epsilon"] = training.target_epsilon ? ordered_json(*training.target_epsilon) : ordered_json(nullptr);
  t["noise_multiplier"] = training.noise_multiplier;
  t["delta"] = training.delta ? ordered_json(*training.delta) : ordered_json("auto");
  t["clip_norm"] = training.clip_norm;
  t["batch_size"] = training.batch_size;
  t["epochs"] = training.epochs;
  t["learning_rate"] = training.learning_rate;
  t["optimizer"] = std::string(to_string(training.optimizer));
  t["eval_interval"] = training.eval_interval;
  t["include_control_code"] = training.include_control_code;
  t["non_private_batch_size"] = training.non_private_batch_size;
  t["non_private_epochs"] = training.non_private_epochs;
  t["non_private_learning_rate"] = training.non_private_learning_rate;
  j["training"] = t;
  j["decoding"] = {{"top_k", decoding.top_k},
                   {"top_p", decoding.top_p},
                   {"temperature", decoding.temperature},
                   {"max_new_tokens", decoding.max_new_tokens},
                   {"total", decoding.total}};
  j["evaluation"] = {{"enabled", evaluation.enabled},
                     {"downstream", evaluation.downstream},
                     {"distribution", evaluation.distribution},
                     {"lengths", evaluation.lengths},
                     {"original_baseline", evaluation.original_baseline},
                     {"metric_sample", evaluation.metric_sample}};
  j["canary"] = {{"enabled", canary.enabled},
                 {"repetitions", canary.repetitions},
                 {"candidates", canary.candidates},
                 {"span_region", canary.span_region},
                 {"subject_count", canary.subject_count},
                 {"subject_attributes", canary.subject_attributes}};
  return j.dump(2);
}

void ExperimentConfig::validate() const {
  try {
    if (threads < 1) throw ConfigError("threads must be at least 1");
    const CorpusProfile profile = profile_by_name(corpus.profile);
    if (corpus.size == 0) throw ConfigError("corpus.size must be positive");
    if (corpus.test_size == 0) throw ConfigError("corpus.test_size must be positive");
    ModelConfig m = model;
    m.vocab_size = Vocabulary::kNumReserved + 1;
    m.validate();
    const TrainingSection& t = training;
    if (t.target_epsilon && !(*t.target_epsilon > 0.0)) throw ConfigError("training.target_epsilon must be positive");
    if (t.delta && !(*t.delta > 0.0 && *t.delta < 1.0)) throw ConfigError("training.delta must lie in (0, 1)");
    if (t.non_private_batch_size <= 0 || !(t.non_private_epochs > 0.0) || !(t.non_private_learning_rate > 0.0)) {
      throw ConfigError("training: invalid non-private settings");
    }
    DpSgdConfig sgd{t.clip_norm, t.noise_multiplier, t.batch_size, t.epochs, t.learning_rate, t.optimizer, 0, 1};
    sgd.validate();
    if (t.dp && t.target_epsilon) {
      // Fail before any stage runs when the budget cannot be met.
      size_t n = corpus.size;
      if (canary.enabled) n += canary.repetitions * default_canaries(profile.schema, 0).size() + canary.subject_count;
      const double delta = t.delta.value_or(n >= 2 ? delta_for_dataset_size(n) : 0.5);
      calibrate_sigma(*t.target_epsilon, delta, sgd.sampling_rate(n), sgd.total_steps(n));
    }
    DecodingPolicy policy{decoding.top_k, decoding.top_p, decoding.temperature, decoding.max_new_tokens, 0};
    policy.validate();
    if (decoding.total == 0) throw ConfigError("decoding.total must be positive");
    if (canary.enabled) {
      if (canary.candidates < 2) throw ConfigError("canary.candidates must be at least 2");
      if (canary.subject_count > default_subject().paraphrases.size()) {
        throw ConfigError("canary.subject_count exceeds the paraphrase bank");
      }
      if (!canary.subject_attributes.empty()) {
        validate_record(profile.schema, Record{canary.subject_attributes, "", RecordSource::kCanary});
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(to_json())); }

std::map<std::string, uint64_t> derive_stage_seeds(uint64_t master_seed) {
  std::map<std::string, uint64_t> seeds;
  for (const char* stage : {"corpus", "canary", "canary-inject", "subject", "subject-inject", "model-init", "training",
                            "generation", "evaluation", "ranking"}) {
    seeds[stage] = derive_seed(master_seed, stage);
  }
  return seeds;
}

// ---------------------------------------------------------------------------
// Manifest

std::string RunManifest::to_json() const {
  ordered_json j;
  j["manifest_version"] = 1;
  j["config_hash"] = config_hash;
  j["config"] = ordered_json::parse(config_json);
  j["module_versions"] = module_versions;
  j["seeds"] = seeds;
  ordered_json a = ordered_json::object();
  for (const auto& [name, info] : artifacts) {
    a[name] = {{"path", info.path}, {"fnv1a64", info.fnv1a64}, {"bytes", info.bytes}};
  }
  j["artifacts"] = a;
  j["arm"] = arm;
  j["privacy"] = {{"spend", spend_json(spend)},
                  {"noise_multiplier", noise_multiplier},
                  {"sampling_rate", sampling_rate},
                  {"steps", steps}};
  ordered_json ledger = ordered_json::array();
  for (const LedgerEntry& e : budget_ledger) ledger.push_back({{"stage", e.stage}, {"epsilon_spent", e.epsilon_spent}});
  j["budget_ledger"] = ledger;
  j["deterministic"] = deterministic;
  j["randomness"] = "seeded mt19937_64 streams; not deployment-grade";
  return j.dump(2);
}

RunManifest RunManifest::from_json(const std::string& text) {
  const ordered_json j = ordered_json::parse(text);
  RunManifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  m.config_json = j.at("config").dump();
  m.module_versions = j.at("module_versions").get<std::map<std::string, std::string>>();
  m.seeds = j.at("seeds").get<std::map<std::string, uint64_t>>();
  for (const auto& [name, info] : j.at("artifacts").items()) {
    m.artifacts[name] = ArtifactInfo{info.at("path").get<std::string>(), info.at("fnv1a64").get<std::string>(),
                                     info.at("bytes").get<uintmax_t>()};
  }
  m.arm = j.at("arm").get<std::string>();
  const json p = j.at("privacy");
  m.spend = spend_from_json(p.at("spend"));
  m.noise_multiplier = p.at("noise_multiplier").get<double>();
  m.sampling_rate = p.at("sampling_rate").get<double>();
  m.steps = p.at("steps").get<int64_t>();
  for (const auto& e : j.at("budget_ledger")) {
    m.budget_ledger.push_back({e.at("stage").get<std::string>(), e.at("epsilon_spent").get<double>()});
  }
  m.deterministic = j.at("deterministic").get<bool>();
  return m;
}

std::string file_fnv1a64(const fs::path& path) { return hex64(fnv1a64(read_text(path))); }

// ---------------------------------------------------------------------------
// Vocabulary and checkpoint metadata

Vocabulary public_vocabulary(const CorpusProfile& profile) {
  std::vector<std::string> texts = profile.fragments();
  for (const std::string& w : canary_vocabulary()) texts.push_back(w);
  for (const std::string& p : default_subject().paraphrases) texts.push_back(p);
  return Vocabulary::build(texts);
}

std::string schema_to_json(const AttributeSchema& schema, const std::string& profile) {
  ordered_json j;
  ordered_json attrs = ordered_json::array();
  for (const Attribute& a : schema.attributes()) attrs.push_back({{"name", a.name}, {"values", a.values}});
  j["attributes"] = attrs;
  if (!profile.empty()) j["profile"] = profile;
  return j.dump(2);
}

std::string checkpoint_metadata(const AttributeSchema& schema, const Vocabulary& vocab, const std::string& profile,
                                const std::vector<double>& label_distribution) {
  ordered_json j;
  j["profile"] = profile;
  j["schema"] = ordered_json::parse(schema_to_json(schema));
  j["vocabulary"] = vocab.tokens();
  j["label_distribution"] = label_distribution;
  return j.dump();
}

void parse_checkpoint_metadata(const std::string& metadata, AttributeSchema* schema, Vocabulary* vocab,
                               std::string* profile, std::vector<double>* label_distribution) {
  const json j = json::parse(metadata);
  if (schema) {
    std::vector<Attribute> attrs;
    for (const json& a : j.at("schema").at("attributes")) {
      attrs.push_back({a.at("name").get<std::string>(), a.at("values").get<std::vector<std::string>>()});
    }
    *schema = AttributeSchema(std::move(attrs));
  }
  if (vocab) {
    const auto tokens = j.at("vocabulary").get<std::vector<std::string>>();
    Vocabulary v;
    for (size_t i = Vocabulary::kNumReserved; i < tokens.size(); ++i) v.add(tokens[i]);
    if (v.tokens() != tokens) throw std::runtime_error("checkpoint vocabulary is inconsistent");
    *vocab = std::move(v);
  }
  if (profile) *profile = j.value("profile", "");
  if (label_distribution) *label_distribution = j.at("label_distribution").get<std::vector<double>>();
}

// ---------------------------------------------------------------------------
// Pipeline

RunOutputs run_pipeline(const ExperimentConfig& config, const fs::path& out_root, const ProgressFn& progress) {
  config.validate();
  auto note = [&](const std::string& stage, const std::string& message) {
    if (progress) progress(stage, message);
  };
  RunOutputs out;
  RunManifest& manifest = out.manifest;
  manifest.config_json = config.to_json();
  manifest.config_hash = config.hash();
  manifest.module_versions = {{"corpus", "1"},     {"language_model", "1"}, {"dp_training", "1"},
                              {"privacy_accountant", "1"}, {"synthesis", "1"}, {"evaluation", "1"},
                              {"canary_lab", "1"}, {"cli", "1"}};
  manifest.seeds = derive_stage_seeds(config.seed);
  manifest.arm = config.training.dp ? "dp" : "non-private";
  manifest.deterministic = config.deterministic;
  const auto& seeds = manifest.seeds;

  out.run_dir = out_root / manifest.config_hash;
  std::vector<std::string> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(out.run_dir / name, text);
    written.push_back(name);
  };
  auto emit_records = [&](const std::string& name, const std::vector<Record>& records) {
    write_records(out.run_dir / name, &out.schema, records);
    written.push_back(name);
  };
  auto stage = [&](const std::string& name, const std::function<void()>& body) {
    note(name, "start");
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      std::vector<std::string> partial;
      for (const std::string& w : written) partial.push_back((out.run_dir / w).string());
      throw StageError(name, e.what(), partial);
    }
    manifest.budget_ledger.push_back({name, 0.0});
    note(name, "done");
  };

  try {
    fs::create_directories(out.run_dir);
  } catch (const std::exception& e) {
    throw StageError("setup", e.what(), {});
  }
  emit("config.json", manifest.config_json);

  CorpusProfile profile = profile_by_name(config.corpus.profile);
  std::vector<CanarySpec> canaries;
  const SubjectSpec subject = default_subject();
  stage("corpus", [&] {
    out.schema = profile.schema;
    const size_t total = config.corpus.size + config.corpus.validation_size + config.corpus.test_size;
    std::vector<Record> all = generate_corpus(out.schema, total, seeds.at("corpus"), profile);
    out.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(config.corpus.size));
    std::vector<Record> validation(all.begin() + static_cast<std::ptrdiff_t>(config.corpus.size),
                                   all.begin() + static_cast<std::ptrdiff_t>(config.corpus.size + config.corpus.validation_size));
    out.test.assign(all.end() - static_cast<std::ptrdiff_t>(config.corpus.test_size), all.end());
    out.training_corpus = out.train;
    if (config.canary.enabled) {
      canaries = default_canaries(out.schema, seeds.at("canary"));
      std::vector<Record> canary_records;
      for (const CanarySpec& c : canaries) canary_records.push_back(c.record());
      if (config.canary.repetitions > 0) {
        out.training_corpus =
            inject_canaries(out.training_corpus, canary_records, config.canary.repetitions, seeds.at("canary-inject"));
      }
      if (config.canary.subject_count > 0) {
        const AttributeMap attrs = config.canary.subject_attributes.empty() ? attributes_for_label(out.schema, 0)
                                                                             : config.canary.subject_attributes;
        const std::vector<Record> extra =
            subject_records(subject, config.canary.subject_count, attrs, seeds.at("subject"));
        out.training_corpus = inject_canaries(out.training_corpus, extra, 1, seeds.at("subject-inject"));
      }
      ordered_json cj = ordered_json::array();
      for (const CanarySpec& c : canaries) {
        cj.push_back({{"type", std::string(to_string(c.type))},
                      {"template", c.template_text},
                      {"secret", c.secret},
                      {"attributes", c.attributes}});
      }
      emit("canaries.json", cj.dump(2));
    }
    emit("schema.json", schema_to_json(out.schema, profile.name));
    emit_records("corpus.jsonl", out.training_corpus);
    emit_records("validation.jsonl", validation);
    emit_records("test.jsonl", out.test);

    // Validation records are kept for the training stage.
    out.synthetic = std::move(validation);
  });

  stage("train", [&] {
    std::vector<Record> validation = std::move(out.synthetic);
    out.synthetic.clear();
    out.vocab = public_vocabulary(profile);
    const auto max_len = static_cast<size_t>(config.model.context_length);
    std::vector<TokenSequence> train_tokens, val_tokens;
    train_tokens.reserve(out.training_corpus.size());
    for (const Record& r : out.training_corpus) train_tokens.push_back(encode_record(out.schema, r, out.vocab, max_len));
    for (const Record& r : validation) val_tokens.push_back(encode_record(out.schema, r, out.vocab, max_len));

    ModelConfig mc = config.model;
    mc.vocab_size = static_cast<int>(out.vocab.size());
    mc.init_seed = seeds.at("model-init");
    const TrainingSection& t = config.training;
    TrainConfig tc;
    tc.dp = t.dp;
    tc.sgd.clip_norm = t.clip_norm;
    tc.sgd.noise_multiplier = t.dp ? t.noise_multiplier : 0.0;
    tc.sgd.expected_batch_size = t.dp ? t.batch_size : t.non_private_batch_size;
    tc.sgd.epochs = t.dp ? t.epochs : t.non_private_epochs;
    tc.sgd.learning_rate = t.dp ? t.learning_rate : t.non_private_learning_rate;
    tc.sgd.optimizer = t.optimizer;
    tc.sgd.seed = seeds.at("training");
    tc.sgd.num_threads = config.threads;
    if (t.dp) tc.target_epsilon = t.target_epsilon;
    tc.delta = t.delta.value_or(delta_for_dataset_size(train_tokens.size()));
    tc.loss.include_control_code = t.include_control_code;
    tc.eval_interval = t.eval_interval;
    note("train", std::to_string(tc.sgd.total_steps(train_tokens.size())) + " steps");
    out.training = train_language_model(train_tokens, val_tokens, mc, tc);

    manifest.noise_multiplier = out.training->noise_multiplier;
    manifest.sampling_rate = tc.sgd.sampling_rate(train_tokens.size());
    manifest.steps = out.training->steps;
    if (t.dp) {
      manifest.spend = out.training->spend;
    } else {
      manifest.spend = PrivacySpend{std::numeric_limits<double>::infinity(), tc.delta, "none", std::nullopt};
    }
    out.label_distribution = empirical_label_distribution(out.schema, out.train);
    save_checkpoint(out.run_dir / "model.ckpt", out.training->params,
                    checkpoint_metadata(out.schema, out.vocab, profile.name, out.label_distribution));
    written.push_back("model.ckpt");
    std::string log;
    for (const TrainingLogEntry& e : out.training->log) log += to_json_line(e) + "\n";
    emit("train_log.jsonl", log);
  });
  manifest.budget_ledger.back().epsilon_spent =
      manifest.spend && config.training.dp ? manifest.spend->epsilon : std::numeric_limits<double>::infinity();

  stage("generate", [&] {
    const Generator generator(out.training->params, out.vocab, out.schema, config.threads);
    DecodingPolicy policy{config.decoding.top_k, config.decoding.top_p, config.decoding.temperature,
                          config.decoding.max_new_tokens, seeds.at("generation")};
    out.synthetic = generator.generate_dataset(out.label_distribution, config.decoding.total, policy);
    emit_records("synthetic.jsonl", out.synthetic);
  });

  if (config.evaluation.enabled) {
    stage("evaluate", [&] {
      EvaluationConfig ec;
      ec.metric_sample = config.evaluation.metric_sample;
      ec.downstream = config.evaluation.downstream;
      ec.distribution = config.evaluation.distribution;
      ec.lengths = config.evaluation.lengths;
      ec.seed = seeds.at("evaluation");
      ec.num_threads = config.threads;
      out.report = evaluate(out.schema, out.train, out.synthetic, out.test, ec);
      out.report.label_tv_distance =
          total_variation(out.label_distribution, empirical_label_distribution(out.schema, out.synthetic));
      if (config.evaluation.downstream && config.evaluation.original_baseline) {
        EvaluationConfig base = ec;
        base.distribution = false;
        base.lengths = false;
        out.original_downstream = evaluate(out.schema, out.train, out.train, out.test, base).downstream;
      }
      ordered_json j = ordered_json::parse(to_json(out.report));
      ordered_json od = ordered_json::array();
      for (const DownstreamResult& r : out.original_downstream) {
        od.push_back({{"attribute", r.attribute}, {"accuracy", r.accuracy}, {"baseline_accuracy", r.baseline_accuracy}});
      }
      j["original_downstream"] = od;
      j["arm"] = manifest.arm;
      j["privacy"] = spend_json(manifest.spend);
      emit("report.json", j.dump(2));
      if (out.report.lengths) emit("lengths.csv", histogram_csv(*out.report.lengths));
    });
  }

  if (config.canary.enabled) {
    stage("canary", [&] {
      ordered_json j;
      ordered_json cj = ordered_json::array();
      const std::vector<bool> leaked = extraction_test(out.synthetic, canaries);
      std::string csv = "canary,candidate,perplexity,is_secret\n";
      for (size_t i = 0; i < canaries.size(); ++i) {
        const RankResult rank = perplexity_rank(
            out.training->params, out.vocab, out.schema, canaries[i], config.canary.candidates,
            derive_seed(seeds.at("ranking"), "canary", i),
            config.canary.span_region ? RankRegion::kSecretSpan : RankRegion::kWholeSequence, config.threads);
        cj.push_back({{"type", std::string(to_string(canaries[i].type))},
                      {"secret", canaries[i].secret},
                      {"repetitions", config.canary.repetitions},
                      {"leaked", static_cast<bool>(leaked[i])},
                      {"rank", rank.rank},
                      {"candidates", rank.candidates},
                      {"secret_perplexity", rank.secret_perplexity}});
        for (size_t c = 0; c < rank.perplexities.size(); ++c) {
          csv += std::string(to_string(canaries[i].type)) + "," + std::to_string(c) + "," +
                 ordered_json(rank.perplexities[c]).dump() + "," + (c == rank.secret_index ? "1" : "0") + "\n";
        }
      }
      j["canaries"] = cj;
      const size_t matches = count_matches(subject, out.synthetic);
      j["subject"] = {{"phrase", subject.phrase},
                      {"injected", config.canary.subject_count},
                      {"injected_fraction", static_cast<double>(config.canary.subject_count) /
                                                static_cast<double>(out.training_corpus.size())},
                      {"matches", matches},
                      {"synthetic_total", out.synthetic.size()},
                      {"synthetic_fraction", static_cast<double>(matches) / static_cast<double>(out.synthetic.size())}};
      out.attack_json = j.dump(2);
      emit("attack.json", out.attack_json);
      emit("decoys.csv", csv);
    });
  }

  for (const std::string& name : written) {
    const fs::path p = out.run_dir / name;
    manifest.artifacts[name] = ArtifactInfo{name, file_fnv1a64(p), fs::file_size(p)};
  }
  write_text(out.run_dir / "manifest.json", manifest.to_json());
  return out;
}

ReplayResult replay_manifest(const fs::path& manifest_path, const fs::path& out_root, const ProgressFn& progress) {
  RunManifest original;
  try {
    original = RunManifest::from_json(read_text(manifest_path));
  } catch (const std::exception& e) {
    throw ConfigError("cannot read manifest: " + std::string(e.what()));
  }
  const ExperimentConfig config = ExperimentConfig::from_json(original.config_json);
  if (config.hash() != original.config_hash) throw ConfigError("manifest config does not match its hash");
  const fs::path original_dir = fs::absolute(manifest_path).parent_path();
  if (fs::weakly_canonical(out_root / original.config_hash) == fs::weakly_canonical(original_dir)) {
    throw ConfigError("replay output must not overwrite the original run directory");
  }
  const RunOutputs rerun = run_pipeline(config, out_root, progress);
  ReplayResult result;
  result.replay_dir = rerun.run_dir;
  for (const auto& [name, info] : original.artifacts) {
    const auto it = rerun.manifest.artifacts.find(name);
    if (it == rerun.manifest.artifacts.end() || it->second.fnv1a64 != info.fnv1a64) {
      result.identical = false;
      result.mismatched.push_back(name);
    }
  }
  for (const auto& [name, info] : rerun.manifest.artifacts) {
    if (!original.artifacts.count(name)) {
      result.identical = false;
      result.mismatched.push_back(name);
    }
  }
  if (read_text(rerun.run_dir / "manifest.json") != read_text(manifest_path)) {
    result.identical = false;
    result.mismatched.push_back("manifest.json");
  }
  return result;
}

std::string run_paired(const ExperimentConfig& config, const fs::path& out_root, const ProgressFn& progress) {
  ordered_json rows = ordered_json::array();
  for (bool dp : {false, true}) {
    const RunOutputs run = run_pipeline(arm_config(config, dp), out_root, progress);
    ordered_json row;
    row["arm"] = run.manifest.arm;
    row["run_dir"] = run.run_dir.filename().string();
    row["privacy"] = spend_json(run.manifest.spend);
    row["noise_multiplier"] = run.manifest.noise_multiplier;
    ordered_json acc = ordered_json::object();
    for (const DownstreamResult& r : run.report.downstream) acc[r.attribute] = r.accuracy;
    row["synthetic_accuracy"] = acc;
    ordered_json orig = ordered_json::object();
    for (const DownstreamResult& r : run.original_downstream) orig[r.attribute] = r.accuracy;
    row["original_accuracy"] = orig;
    if (run.report.precision_recall) row["f1"] = run.report.precision_recall->f1;
    if (run.report.fid) row["fid"] = *run.report.fid;
    if (run.report.mauve) row["mauve"] = *run.report.mauve;
    if (run.report.lengths) {
      row["mean_length"] = run.report.lengths->synthetic.mean;
      row["truncated_fraction"] = run.report.lengths->synthetic.truncated_fraction;
    }
    if (!run.attack_json.empty()) row["attack"] = ordered_json::parse(run.attack_json);
    rows.push_back(row);
  }
  ordered_json j;
  j["config_hash"] = config.hash();
  j["arms"] = rows;
  const fs::path dir = out_root / ("paired-" + config.hash());
  fs::create_directories(dir);
  const std::string text = j.dump(2);
  write_text(dir / "comparison.json", text);
  return text;
}

}  // namespace dpsynth
