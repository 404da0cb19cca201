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

// Command-line front end: corpus, train, accountant, generate, evaluate,
// canary and pipeline commands.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dpsynth/canary_lab.h"
#include "dpsynth/corpus.h"
#include "dpsynth/dp_training.h"
#include "dpsynth/evaluation.h"
#include "dpsynth/pipeline.h"
#include "dpsynth/privacy_accountant.h"
#include "dpsynth/synthesis.h"
#include "json.hpp"

namespace fs = std::filesystem;
using dpsynth::ConfigError;
using dpsynth::StageError;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

void log_progress(const std::string& stage, const std::string& message) {
  std::cerr << "[" << stage << "] " << message << "\n";
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

dpsynth::AttributeSchema load_schema(const std::string& schema_path, const std::string& profile_name,
                                     std::string* resolved_profile) {
  if (!schema_path.empty()) {
    std::string profile;
    dpsynth::AttributeSchema schema = dpsynth::schema_from_json_file(schema_path, &profile);
    if (resolved_profile) *resolved_profile = profile.empty() ? profile_name : profile;
    return schema;
  }
  if (resolved_profile) *resolved_profile = profile_name;
  return dpsynth::profile_by_name(profile_name).schema;
}

double resolve_delta(const std::string& delta, size_t n) {
  if (delta == "auto") {
    if (n < 2) throw ConfigError("--delta auto needs --n >= 2");
    return dpsynth::delta_for_dataset_size(n);
  }
  try {
    return std::stod(delta);
  } catch (const std::exception&) {
    throw ConfigError("--delta must be a number or 'auto'");
  }
}

std::string number(double v) { return std::isfinite(v) ? ordered_json(v).dump() : "\"inf\""; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private synthetic text toolkit"};
  app.require_subcommand(1);

  // corpus
  auto* corpus = app.add_subcommand("corpus", "Generate or modify labeled corpora");
  corpus->require_subcommand(1);
  std::string gen_profile = "reviews", gen_out, gen_schema_out;
  size_t gen_n = 50000;
  uint64_t gen_seed = 1;
  auto* corpus_gen = corpus->add_subcommand("gen", "Generate a corpus from a built-in profile");
  corpus_gen->add_option("--profile", gen_profile, "reviews | reviews-uniform | feedback");
  corpus_gen->add_option("--n", gen_n, "Number of records");
  corpus_gen->add_option("--seed", gen_seed);
  corpus_gen->add_option("--out", gen_out, "Output JSON-lines file")->required();
  corpus_gen->add_option("--schema-out", gen_schema_out, "Also write the schema");

  std::string inj_in, inj_out, inj_schema, inj_profile = "reviews", inj_canaries_out;
  size_t inj_reps = 1;
  uint64_t inj_seed = 1;
  auto* corpus_inject = corpus->add_subcommand("inject", "Insert the default canaries into a corpus");
  corpus_inject->add_option("--corpus", inj_in)->required();
  corpus_inject->add_option("--schema", inj_schema);
  corpus_inject->add_option("--profile", inj_profile);
  corpus_inject->add_option("--repetitions", inj_reps);
  corpus_inject->add_option("--seed", inj_seed);
  corpus_inject->add_option("--out", inj_out)->required();
  corpus_inject->add_option("--canaries-out", inj_canaries_out);

  // train
  auto* train = app.add_subcommand("train", "Train a generator (DP-SGD or non-private)");
  std::string train_config, train_data, train_validation, train_out = "model.ckpt", train_log;
  bool train_dp = false, train_np = false;
  std::optional<double> train_eps;
  train->add_option("--config", train_config)->required();
  train->add_flag("--dp", train_dp, "Force the DP arm");
  train->add_flag("--non-private", train_np, "Force the non-private arm");
  train->add_option("--target-epsilon", train_eps);
  train->add_option("--data", train_data, "Training records (default: generated from the config)");
  train->add_option("--validation", train_validation);
  train->add_option("--out", train_out);
  train->add_option("--log", train_log, "Training log (JSON lines)");

  // accountant
  auto* accountant = app.add_subcommand("accountant", "Privacy accounting");
  accountant->require_subcommand(1);
  double acc_sigma = 1.0, acc_q = -1.0, acc_epochs = -1.0, acc_target = 4.0;
  int64_t acc_steps = -1;
  size_t acc_n = 0;
  int acc_batch = 0;
  std::string acc_delta = "auto";
  auto add_shape = [&](CLI::App* sub) {
    sub->add_option("--q", acc_q, "Sampling rate (or give --n and --batch)");
    sub->add_option("--n", acc_n, "Dataset size");
    sub->add_option("--batch", acc_batch, "Expected batch size");
    sub->add_option("--steps", acc_steps);
    sub->add_option("--epochs", acc_epochs);
    sub->add_option("--delta", acc_delta, "Number or 'auto' = 1/(N ln N)");
  };
  auto* acc_eps = accountant->add_subcommand("epsilon", "Epsilon for a noise multiplier");
  acc_eps->add_option("--sigma", acc_sigma)->required();
  add_shape(acc_eps);
  auto* acc_cal = accountant->add_subcommand("calibrate", "Noise multiplier for a target epsilon");
  acc_cal->add_option("--target-epsilon", acc_target)->required();
  add_shape(acc_cal);

  // generate
  auto* generate = app.add_subcommand("generate", "Sample a synthetic dataset from a checkpoint");
  std::string gen_ckpt, gen_dataset_out = "synthetic.jsonl";
  size_t gen_total = 10000;
  dpsynth::DecodingPolicy policy;
  int gen_threads = 1;
  generate->add_option("--checkpoint", gen_ckpt)->required();
  generate->add_option("--total", gen_total);
  generate->add_option("--top-k", policy.top_k);
  generate->add_option("--top-p", policy.top_p);
  generate->add_option("--temperature", policy.temperature);
  generate->add_option("--max-new-tokens", policy.max_new_tokens);
  generate->add_option("--seed", policy.seed);
  generate->add_option("--threads", gen_threads);
  generate->add_option("--out", gen_dataset_out);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Compare a synthetic dataset with the original");
  std::string ev_original, ev_synthetic, ev_test, ev_schema, ev_profile = "reviews", ev_out = "report.json";
  dpsynth::EvaluationConfig ev_config;
  bool ev_no_downstream = false;
  evaluate->add_option("--original", ev_original)->required();
  evaluate->add_option("--synthetic", ev_synthetic)->required();
  evaluate->add_option("--test", ev_test, "Held-out original records for downstream accuracy");
  evaluate->add_option("--schema", ev_schema);
  evaluate->add_option("--profile", ev_profile);
  evaluate->add_option("--metric-sample", ev_config.metric_sample);
  evaluate->add_option("--seed", ev_config.seed);
  evaluate->add_option("--threads", ev_config.num_threads);
  evaluate->add_flag("--no-downstream", ev_no_downstream);
  evaluate->add_option("--out", ev_out);

  // canary
  auto* canary = app.add_subcommand("canary", "Memorization attacks");
  canary->require_subcommand(1);
  std::string can_config, can_ckpt, can_out = "attack.json", can_synthetic;
  size_t can_candidates = 1000;
  bool can_span = false;
  auto* canary_run = canary->add_subcommand("run", "Perplexity ranks and extraction test for the default canaries");
  canary_run->add_option("--config", can_config)->required();
  canary_run->add_option("--checkpoint", can_ckpt)->required();
  canary_run->add_option("--candidates", can_candidates);
  canary_run->add_option("--synthetic", can_synthetic, "Generations to scan for secrets");
  canary_run->add_flag("--span", can_span, "Score only the secret span");
  canary_run->add_option("--out", can_out);

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "End-to-end runs");
  pipeline->require_subcommand(1);
  std::string pl_config, pl_root = "runs", pl_manifest, pl_replay_root;
  bool pl_paired = false;
  std::optional<uint64_t> pl_seed;
  std::optional<double> pl_eps;
  std::optional<int> pl_threads;
  std::string pl_delta;
  auto* pipeline_run = pipeline->add_subcommand("run", "Run corpus, train, generate, evaluate and canary stages");
  pipeline_run->add_option("--config", pl_config)->required();
  pipeline_run->add_option("--out-root", pl_root);
  pipeline_run->add_flag("--paired", pl_paired, "Run both the DP and the non-private arm");
  pipeline_run->add_option("--seed", pl_seed);
  pipeline_run->add_option("--target-epsilon", pl_eps);
  pipeline_run->add_option("--delta", pl_delta, "Number or 'auto'");
  pipeline_run->add_option("--threads", pl_threads);
  auto* pipeline_replay = pipeline->add_subcommand("replay", "Re-run a manifest and compare artifacts");
  pipeline_replay->add_option("--manifest", pl_manifest)->required();
  pipeline_replay->add_option("--out-root", pl_replay_root, "Default: <run dir>/../replay");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (corpus_gen->parsed()) {
      const dpsynth::CorpusProfile profile = dpsynth::profile_by_name(gen_profile);
      const auto records = dpsynth::generate_corpus(profile.schema, gen_n, gen_seed, profile);
      dpsynth::write_records(gen_out, &profile.schema, records);
      if (!gen_schema_out.empty()) write_file(gen_schema_out, dpsynth::schema_to_json(profile.schema, profile.name));
      std::cerr << "wrote " << records.size() << " records to " << gen_out << "\n";
    } else if (corpus_inject->parsed()) {
      if (inj_reps == 0) throw ConfigError("--repetitions must be at least 1");
      const dpsynth::AttributeSchema schema = load_schema(inj_schema, inj_profile, nullptr);
      const auto records = dpsynth::read_records(inj_in);
      const auto canaries = dpsynth::default_canaries(schema, inj_seed);
      std::vector<dpsynth::Record> canary_records;
      ordered_json cj = ordered_json::array();
      for (const auto& c : canaries) {
        canary_records.push_back(c.record());
        cj.push_back({{"type", std::string(dpsynth::to_string(c.type))}, {"secret", c.secret},
                      {"template", c.template_text}, {"attributes", c.attributes}});
      }
      const auto injected = dpsynth::inject_canaries(records, canary_records, inj_reps, inj_seed);
      dpsynth::write_records(inj_out, &schema, injected);
      if (!inj_canaries_out.empty()) write_file(inj_canaries_out, cj.dump(2));
    } else if (train->parsed()) {
      if (train_dp && train_np) throw ConfigError("--dp and --non-private are exclusive");
      dpsynth::ExperimentConfig config = dpsynth::ExperimentConfig::from_file(train_config);
      if (train_dp) config.training.dp = true;
      if (train_np) config.training.dp = false;
      if (train_eps) config.training.target_epsilon = *train_eps;
      config.validate();
      const dpsynth::CorpusProfile profile = dpsynth::profile_by_name(config.corpus.profile);
      const auto seeds = dpsynth::derive_stage_seeds(config.seed);
      std::vector<dpsynth::Record> records, validation;
      if (!train_data.empty()) {
        records = dpsynth::read_records(train_data);
        if (!train_validation.empty()) validation = dpsynth::read_records(train_validation);
      } else {
        auto all = dpsynth::generate_corpus(profile.schema, config.corpus.size + config.corpus.validation_size,
                                            seeds.at("corpus"), profile);
        validation.assign(all.begin() + static_cast<std::ptrdiff_t>(config.corpus.size), all.end());
        all.resize(config.corpus.size);
        records = std::move(all);
      }
      const dpsynth::Vocabulary vocab = dpsynth::public_vocabulary(profile);
      const auto max_len = static_cast<size_t>(config.model.context_length);
      std::vector<dpsynth::TokenSequence> train_tokens, val_tokens;
      size_t unknown = 0;
      for (const auto& r : records) {
        dpsynth::validate_record(profile.schema, r);
        train_tokens.push_back(dpsynth::encode_record(profile.schema, r, vocab, max_len));
        for (auto t : train_tokens.back()) unknown += t == dpsynth::Vocabulary::kUnk ? 1 : 0;
      }
      for (const auto& r : validation) val_tokens.push_back(dpsynth::encode_record(profile.schema, r, vocab, max_len));
      if (unknown > 0) std::cerr << "warning: " << unknown << " tokens outside the vocabulary map to <unk>\n";
      dpsynth::ModelConfig mc = config.model;
      mc.vocab_size = static_cast<int>(vocab.size());
      mc.init_seed = seeds.at("model-init");
      const auto& t = config.training;
      dpsynth::TrainConfig tc;
      tc.dp = t.dp;
      tc.sgd = {t.clip_norm, t.dp ? t.noise_multiplier : 0.0, t.dp ? t.batch_size : t.non_private_batch_size,
                t.dp ? t.epochs : t.non_private_epochs, t.dp ? t.learning_rate : t.non_private_learning_rate,
                t.optimizer, seeds.at("training"), config.threads};
      if (t.dp) tc.target_epsilon = t.target_epsilon;
      tc.delta = t.delta.value_or(dpsynth::delta_for_dataset_size(train_tokens.size()));
      tc.loss.include_control_code = t.include_control_code;
      tc.eval_interval = t.eval_interval;
      const dpsynth::TrainResult result = dpsynth::train_language_model(train_tokens, val_tokens, mc, tc);
      dpsynth::save_checkpoint(
          train_out, result.params,
          dpsynth::checkpoint_metadata(profile.schema, vocab, profile.name,
                                       dpsynth::empirical_label_distribution(profile.schema, records)));
      if (!train_log.empty()) {
        std::string log;
        for (const auto& e : result.log) log += dpsynth::to_json_line(e) + "\n";
        write_file(train_log, log);
      }
      ordered_json summary;
      summary["steps"] = result.steps;
      summary["best_step"] = result.best_step;
      summary["noise_multiplier"] = result.noise_multiplier;
      summary["delta"] = result.delta;
      if (result.spend) summary["epsilon"] = result.spend->epsilon;
      std::cout << summary.dump(2) << "\n";
    } else if (acc_eps->parsed() || acc_cal->parsed()) {
      double q = acc_q;
      if (q < 0.0) {
        if (acc_n == 0 || acc_batch <= 0) throw ConfigError("give --q or both --n and --batch");
        q = std::min(1.0, static_cast<double>(acc_batch) / static_cast<double>(acc_n));
      }
      int64_t steps = acc_steps;
      if (steps < 0) {
        if (acc_epochs <= 0.0 || acc_n == 0 || acc_batch <= 0) throw ConfigError("give --steps or --epochs with --n and --batch");
        dpsynth::DpSgdConfig sgd;
        sgd.expected_batch_size = acc_batch;
        sgd.epochs = acc_epochs;
        steps = sgd.total_steps(acc_n);
      }
      const double delta = resolve_delta(acc_delta, acc_n);
      ordered_json j;
      j["sampling_rate"] = q;
      j["steps"] = steps;
      j["delta"] = delta;
      if (acc_eps->parsed()) {
        const auto spend = dpsynth::compute_epsilon({acc_sigma, q, steps}, delta);
        j["noise_multiplier"] = acc_sigma;
        j["epsilon"] = ordered_json::parse(number(spend.epsilon));
        if (spend.optimal_order) j["optimal_order"] = *spend.optimal_order;
      } else {
        const double sigma = dpsynth::calibrate_sigma(acc_target, delta, q, steps);
        j["target_epsilon"] = acc_target;
        j["noise_multiplier"] = sigma;
        j["epsilon"] = dpsynth::compute_epsilon({sigma, q, steps}, delta).epsilon;
      }
      std::cout << j.dump(2) << "\n";
    } else if (generate->parsed()) {
      std::string metadata;
      const dpsynth::ModelParams params = dpsynth::load_checkpoint(gen_ckpt, &metadata);
      dpsynth::AttributeSchema schema;
      dpsynth::Vocabulary vocab;
      std::vector<double> distribution;
      dpsynth::parse_checkpoint_metadata(metadata, &schema, &vocab, nullptr, &distribution);
      const dpsynth::Generator generator(params, vocab, schema, gen_threads);
      std::vector<std::string> warnings;
      const auto records = generator.generate_dataset(distribution, gen_total, policy, &warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      dpsynth::write_records(gen_dataset_out, &schema, records);
      std::cerr << "wrote " << records.size() << " samples to " << gen_dataset_out << "\n";
    } else if (evaluate->parsed()) {
      const dpsynth::AttributeSchema schema = load_schema(ev_schema, ev_profile, nullptr);
      const auto original = dpsynth::read_records(ev_original);
      const auto synthetic = dpsynth::read_records(ev_synthetic);
      std::vector<dpsynth::Record> test;
      if (!ev_test.empty()) test = dpsynth::read_records(ev_test);
      ev_config.downstream = !ev_no_downstream && !test.empty();
      dpsynth::EvalReport report = dpsynth::evaluate(schema, original, synthetic, test, ev_config);
      report.label_tv_distance = dpsynth::total_variation(dpsynth::empirical_label_distribution(schema, original),
                                                          dpsynth::empirical_label_distribution(schema, synthetic));
      write_file(ev_out, dpsynth::to_json(report));
      if (report.lengths) {
        fs::path csv = ev_out;
        csv.replace_extension(".lengths.csv");
        write_file(csv, dpsynth::histogram_csv(*report.lengths));
      }
      std::cout << "wrote " << ev_out << "\n";
    } else if (canary_run->parsed()) {
      const dpsynth::ExperimentConfig config = dpsynth::ExperimentConfig::from_file(can_config);
      std::string metadata;
      const dpsynth::ModelParams params = dpsynth::load_checkpoint(can_ckpt, &metadata);
      dpsynth::AttributeSchema schema;
      dpsynth::Vocabulary vocab;
      dpsynth::parse_checkpoint_metadata(metadata, &schema, &vocab, nullptr, nullptr);
      const auto seeds = dpsynth::derive_stage_seeds(config.seed);
      const auto canaries = dpsynth::default_canaries(schema, seeds.at("canary"));
      std::vector<dpsynth::Record> synthetic;
      if (!can_synthetic.empty()) synthetic = dpsynth::read_records(can_synthetic);
      const auto leaked = dpsynth::extraction_test(synthetic, canaries);
      ordered_json cj = ordered_json::array();
      for (size_t i = 0; i < canaries.size(); ++i) {
        const auto rank = dpsynth::perplexity_rank(
            params, vocab, schema, canaries[i], can_candidates, dpsynth::derive_seed(seeds.at("ranking"), "canary", i),
            can_span ? dpsynth::RankRegion::kSecretSpan : dpsynth::RankRegion::kWholeSequence, config.threads);
        ordered_json e;
        e["type"] = std::string(dpsynth::to_string(canaries[i].type));
        e["secret"] = canaries[i].secret;
        e["leaked"] = can_synthetic.empty() ? ordered_json(nullptr) : ordered_json(static_cast<bool>(leaked[i]));
        e["rank"] = rank.rank;
        e["candidates"] = rank.candidates;
        e["secret_perplexity"] = rank.secret_perplexity;
        e["perplexities"] = rank.perplexities;
        cj.push_back(e);
      }
      ordered_json j;
      j["canaries"] = cj;
      write_file(can_out, j.dump(2));
      std::cout << "wrote " << can_out << "\n";
    } else if (pipeline_run->parsed()) {
      dpsynth::ExperimentConfig config = dpsynth::ExperimentConfig::from_file(pl_config);
      if (pl_seed) config.seed = *pl_seed;
      if (pl_eps) config.training.target_epsilon = *pl_eps;
      if (pl_threads) config.threads = *pl_threads;
      if (!pl_delta.empty()) {
        if (pl_delta == "auto") {
          config.training.delta.reset();
        } else {
          config.training.delta = resolve_delta(pl_delta, 0);
        }
      }
      config.validate();
      if (pl_paired) {
        std::cout << dpsynth::run_paired(config, pl_root, log_progress) << "\n";
      } else {
        const dpsynth::RunOutputs out = dpsynth::run_pipeline(config, pl_root, log_progress);
        std::cout << (out.run_dir / "manifest.json").string() << "\n";
      }
    } else if (pipeline_replay->parsed()) {
      const fs::path manifest = pl_manifest;
      const fs::path root = pl_replay_root.empty() ? fs::absolute(manifest).parent_path().parent_path() / "replay"
                                                   : fs::path(pl_replay_root);
      const dpsynth::ReplayResult r = dpsynth::replay_manifest(manifest, root, log_progress);
      ordered_json j;
      j["identical"] = r.identical;
      j["mismatched"] = r.mismatched;
      j["replay_dir"] = r.replay_dir.string();
      std::cout << j.dump(2) << "\n";
      if (!r.identical) return kExitStage;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dpsynth::UnreachableTargetError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& p : e.partial_artifacts) std::cerr << "  partial artifact: " << p << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitOk;
}
