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

#include "dpsynth/canary_lab.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>

#include <gtest/gtest.h>
#include "json.hpp"

namespace dpsynth {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dpsynth_pipeline_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string tiny_config_json(bool dp, bool canary) {
  nlohmann::ordered_json j;
  j["name"] = "tiny";
  j["seed"] = 5;
  j["corpus"] = {{"size", 300}, {"validation_size", 40}, {"test_size", 200}};
  j["model"] = {{"context_length", 80}, {"d_model", 8}, {"n_layers", 1}, {"n_heads", 2}, {"ff_dim", 16}};
  j["training"] = {{"dp", dp},
                   {"target_epsilon", 8.0},
                   {"batch_size", 50},
                   {"epochs", 1.0},
                   {"non_private_batch_size", 50},
                   {"non_private_epochs", 1.0}};
  j["decoding"] = {{"total", 60}, {"max_new_tokens", 12}};
  j["evaluation"] = {{"metric_sample", 60}};
  j["canary"] = {{"enabled", canary}, {"repetitions", 2}, {"candidates", 20}, {"subject_count", 3}};
  return j.dump();
}

TEST(ConfigTest, DefaultsRoundTripAndHash) {
  const ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash().size(), 16u);
  ExperimentConfig d = c;
  d.decoding.top_p = 0.95;
  EXPECT_NE(d.hash(), c.hash());
}

TEST(ConfigTest, KeyOrderDoesNotMatter) {
  const ExperimentConfig a = ExperimentConfig::from_json(R"({"seed": 3, "name": "x", "training": {"epochs": 2, "dp": false}})");
  const ExperimentConfig b = ExperimentConfig::from_json(R"({"training": {"dp": false, "epochs": 2}, "name": "x", "seed": 3})");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.seed, 3u);
  EXPECT_FALSE(a.training.dp);
  EXPECT_EQ(a.training.batch_size, 512);  // untouched default
}

TEST(ConfigTest, RejectsBadInput) {
  for (const char* bad : {
           R"({"sed": 1})",
           R"({"training": {"batchsize": 3}})",
           R"({"training": {"epochs": "three"}})",
           R"({"decoding": {"top_p": 1.5}})",
           R"({"decoding": {"top_k": 0}})",
           R"({"corpus": {"profile": "nope"}})",
           R"({"model": {"d_model": 30, "n_heads": 4}})",
           R"({"training": {"delta": 2.0}})",
           R"({"training": {"target_epsilon": -1}})",
           R"({"training": {"target_epsilon": 1e-6}})",
           R"({"canary": {"enabled": true, "subject_count": 5000}})",
           R"({"canary": {"enabled": true, "subject_attributes": {"Business Type": "Zoo"}}})",
           R"([1, 2])",
           R"({"seed": )",
       }) {
    EXPECT_THROW(ExperimentConfig::from_json(bad).validate(), ConfigError) << bad;
  }
  EXPECT_THROW(ExperimentConfig::from_file("/nonexistent/config.json"), ConfigError);
}

TEST(SeedTest, StagesGetDistinctStableSeeds) {
  const auto a = derive_stage_seeds(1);
  EXPECT_EQ(a, derive_stage_seeds(1));
  EXPECT_EQ(a.size(), 10u);
  std::set<uint64_t> values;
  for (const auto& [k, v] : a) values.insert(v);
  EXPECT_EQ(values.size(), a.size());
}

TEST(SeedTest, NoCollisionsAcrossAMillionDerivations) {
  std::unordered_set<uint64_t> seen;
  seen.reserve(1000000);
  for (uint64_t master = 0; master < 100000; ++master) {
    for (const auto& [k, v] : derive_stage_seeds(master)) seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 1000000u);
}

TEST(CheckpointMetadataTest, RoundTrip) {
  const CorpusProfile p = reviews_profile();
  const Vocabulary vocab = public_vocabulary(p);
  const std::vector<double> dist = p.label_distribution();
  AttributeSchema schema;
  Vocabulary v2;
  std::string profile;
  std::vector<double> d2;
  parse_checkpoint_metadata(checkpoint_metadata(p.schema, vocab, p.name, dist), &schema, &v2, &profile, &d2);
  EXPECT_EQ(schema, p.schema);
  EXPECT_EQ(v2, vocab);
  EXPECT_EQ(profile, "reviews");
  EXPECT_EQ(d2, dist);
}

TEST(PublicVocabularyTest, CoversCorpusCanariesAndSubject) {
  const CorpusProfile p = reviews_profile();
  const Vocabulary vocab = public_vocabulary(p);
  for (const Record& r : generate_corpus(p.schema, 200, 2, p)) {
    for (TokenId t : encode_record(p.schema, r, vocab)) EXPECT_NE(t, Vocabulary::kUnk);
  }
  for (const auto& c : default_canaries(p.schema, 3)) {
    for (TokenId t : encode_record(p.schema, c.record(), vocab)) EXPECT_NE(t, Vocabulary::kUnk);
  }
  for (const std::string& s : default_subject().paraphrases) {
    for (TokenId t : encode_words(s, vocab)) EXPECT_NE(t, Vocabulary::kUnk);
  }
}

TEST(PipelineTest, TinyRunWritesArtifactsAndReplays) {
  const fs::path root = scratch_dir("run");
  const ExperimentConfig config = ExperimentConfig::from_json(tiny_config_json(true, true));
  std::vector<std::string> stages;
  const RunOutputs out = run_pipeline(config, root / "runs", [&](const std::string& s, const std::string& m) {
    if (m == "done") stages.push_back(s);
  });
  EXPECT_EQ(stages, (std::vector<std::string>{"corpus", "train", "generate", "evaluate", "canary"}));
  EXPECT_EQ(out.run_dir, root / "runs" / config.hash());
  for (const char* name : {"config.json", "canaries.json", "schema.json", "corpus.jsonl", "validation.jsonl",
                           "test.jsonl", "model.ckpt", "train_log.jsonl", "synthetic.jsonl", "report.json",
                           "lengths.csv", "attack.json", "decoys.csv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(out.run_dir / name)) << name;
  }
  EXPECT_EQ(out.training_corpus.size(), 300u + 5 * 2 + 3);
  EXPECT_EQ(out.synthetic.size(), 60u);

  const RunManifest m = RunManifest::from_json(
      (std::stringstream() << std::ifstream(out.run_dir / "manifest.json").rdbuf()).str());
  EXPECT_EQ(m.arm, "dp");
  ASSERT_TRUE(m.spend.has_value());
  EXPECT_LE(m.spend->epsilon, 8.0);
  EXPECT_EQ(m.config_hash, config.hash());
  EXPECT_EQ(m.artifacts.size(), 13u);
  EXPECT_EQ(m.artifacts.at("report.json").fnv1a64, file_fnv1a64(out.run_dir / "report.json"));
  ASSERT_EQ(m.budget_ledger.size(), 5u);
  double total = 0.0;
  for (const LedgerEntry& e : m.budget_ledger) {
    if (e.stage != "train") {
      EXPECT_EQ(e.epsilon_spent, 0.0) << e.stage;
    }
    total += e.epsilon_spent;
  }
  EXPECT_EQ(total, m.spend->epsilon);

  const auto attack = nlohmann::json::parse(out.attack_json);
  EXPECT_EQ(attack["canaries"].size(), 5u);
  EXPECT_EQ(attack["subject"]["injected"], 3);
  const auto report = nlohmann::json::parse(
      (std::stringstream() << std::ifstream(out.run_dir / "report.json").rdbuf()).str());
  for (const char* key : {"downstream", "f1", "fid", "mauve", "lengths", "label_tv_distance", "privacy"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }

  const ReplayResult r = replay_manifest(out.run_dir / "manifest.json", root / "replay");
  EXPECT_TRUE(r.identical);
  EXPECT_TRUE(r.mismatched.empty());
  EXPECT_THROW(replay_manifest(out.run_dir / "manifest.json", root / "runs"), ConfigError);
  fs::remove_all(root);
}

TEST(PipelineTest, NonPrivateArmRecordsInfiniteSpend) {
  const fs::path root = scratch_dir("np");
  const ExperimentConfig config = ExperimentConfig::from_json(tiny_config_json(false, false));
  const RunOutputs out = run_pipeline(config, root);
  EXPECT_EQ(out.manifest.arm, "non-private");
  ASSERT_TRUE(out.manifest.spend.has_value());
  EXPECT_TRUE(std::isinf(out.manifest.spend->epsilon));
  EXPECT_EQ(out.manifest.spend->accountant_name, "none");
  EXPECT_FALSE(fs::exists(out.run_dir / "attack.json"));
  fs::remove_all(root);
}

TEST(PipelineTest, UnwritableRootIsAStageError) {
  const fs::path root = scratch_dir("blocked");
  std::ofstream(root / "file") << "x";
  const ExperimentConfig config = ExperimentConfig::from_json(tiny_config_json(true, false));
  EXPECT_THROW(run_pipeline(config, root / "file"), StageError);
  fs::remove_all(root);
}

// --- Command-line exit codes.

int run_cli(const std::string& args, std::string* stdout_text = nullptr) {
  const std::string out_file = (fs::temp_directory_path() / "dpsynth_cli_stdout.txt").string();
  const std::string cmd = std::string(DPSYNTH_CLI_PATH) + " " + args + " >" + out_file + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  if (stdout_text) *stdout_text = (std::stringstream() << std::ifstream(out_file).rdbuf()).str();
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(CliTest, AccountantCommands) {
  std::string out;
  EXPECT_EQ(run_cli("accountant epsilon --sigma 0.781 --n 50000 --batch 256 --epochs 20", &out), 0);
  const auto j = nlohmann::json::parse(out);
  EXPECT_NEAR(j["epsilon"].get<double>(), 4.0, 0.05);
  EXPECT_EQ(run_cli("accountant calibrate --target-epsilon 4 --n 50000 --batch 256 --epochs 20", &out), 0);
  EXPECT_NEAR(nlohmann::json::parse(out)["noise_multiplier"].get<double>(), 0.781, 0.01);
  EXPECT_EQ(run_cli("accountant calibrate --target-epsilon 1e-6 --q 1 --steps 100000 --delta 1e-5"), 2);
  EXPECT_EQ(run_cli("accountant epsilon --sigma 1 --q 0.5 --steps 10 --delta nonsense"), 2);
}

TEST(CliTest, ParseAndConfigErrorsExitTwo) {
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("pipeline run"), 2);
  const fs::path root = scratch_dir("cli");
  std::ofstream(root / "bad.json") << R"({"training": {"batchsize": 3}})";
  EXPECT_EQ(run_cli("pipeline run --config " + (root / "bad.json").string() + " --out-root " + root.string()), 2);
  fs::remove_all(root);
}

TEST(CliTest, PipelineRunAndReplay) {
  const fs::path root = scratch_dir("cli_run");
  std::ofstream(root / "tiny.json") << tiny_config_json(true, false);
  std::string out;
  ASSERT_EQ(run_cli("pipeline run --config " + (root / "tiny.json").string() + " --out-root " +
                        (root / "runs").string(), &out), 0);
  const std::string manifest = out.substr(0, out.find('\n'));
  ASSERT_TRUE(fs::exists(manifest));
  EXPECT_EQ(run_cli("pipeline replay --manifest " + manifest + " --out-root " + (root / "r1").string(), &out), 0);
  EXPECT_TRUE(nlohmann::json::parse(out)["identical"].get<bool>());

  // A tampered artifact hash makes the replay report a mismatch.
  auto m = nlohmann::ordered_json::parse((std::stringstream() << std::ifstream(manifest).rdbuf()).str());
  m["artifacts"]["synthetic.jsonl"]["fnv1a64"] = "0000000000000000";
  std::ofstream(root / "tampered.json") << m.dump(2);
  EXPECT_EQ(run_cli("pipeline replay --manifest " + (root / "tampered.json").string() + " --out-root " +
                        (root / "r2").string(), &out), 3);
  fs::remove_all(root);
}

}  // namespace
}  // namespace dpsynth
