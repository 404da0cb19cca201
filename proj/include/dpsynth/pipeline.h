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

#ifndef DPSYNTH_PIPELINE_H_
#define DPSYNTH_PIPELINE_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpsynth/corpus.h"
#include "dpsynth/dp_training.h"
#include "dpsynth/evaluation.h"
#include "dpsynth/language_model.h"
#include "dpsynth/privacy_accountant.h"
#include "dpsynth/synthesis.h"

namespace dpsynth {

// Invalid or inconsistent experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage failed (CLI exit code 3).
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message, std::vector<std::string> partial_artifacts)
      : std::runtime_error("stage '" + stage + "' failed: " + message),
        stage(std::move(stage)),
        partial_artifacts(std::move(partial_artifacts)) {}
  std::string stage;
  std::vector<std::string> partial_artifacts;
};

struct CorpusSection {
  std::string profile = "reviews";
  size_t size = 50000;
  size_t validation_size = 1000;
  size_t test_size = 5000;
};

struct TrainingSection {
  bool dp = true;
  std::optional<double> target_epsilon = 4.0;
  // Used when target_epsilon is absent.
  double noise_multiplier = 0.0;
  // Absent: 1 / (N ln N).
  std::optional<double> delta;
  double clip_norm = 1.0;
  int batch_size = 512;
  double epochs = 3.0;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int64_t eval_interval = 0;
  bool include_control_code = true;
  // Values applied when the arm is non-private.
  int non_private_batch_size = 64;
  double non_private_epochs = 3.0;
  double non_private_learning_rate = 2e-3;
};

struct DecodingSection {
  int top_k = 50;
  double top_p = 0.9;
  double temperature = 1.0;
  int max_new_tokens = 0;
  size_t total = 10000;
};

struct EvaluationSection {
  bool enabled = true;
  bool downstream = true;
  bool distribution = true;
  bool lengths = true;
  // Also train classifiers on the original records for reference.
  bool original_baseline = true;
  size_t metric_sample = 2000;
};

struct CanarySection {
  bool enabled = false;
  size_t repetitions = 1;
  size_t candidates = 1000;
  bool span_region = false;
  size_t subject_count = 0;
  // Label of the subject records; empty selects label 0.
  AttributeMap subject_attributes;
};

struct ExperimentConfig {
  std::string name = "experiment";
  uint64_t seed = 1;
  bool deterministic = true;
  int threads = 1;
  CorpusSection corpus;
  ModelConfig model{.vocab_size = 0, .context_length = 80, .d_model = 32, .n_layers = 2, .n_heads = 2,
                    .ff_dim = 128, .init_seed = 0};
  TrainingSection training;
  DecodingSection decoding;
  EvaluationSection evaluation;
  CanarySection canary;

  // Throws ConfigError on unknown keys, wrong types or invalid values.
  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig from_file(const std::filesystem::path& path);
  // Canonical JSON (every field, fixed key order).
  std::string to_json() const;
  void validate() const;
  // 16 hex digits of FNV-1a over the canonical JSON.
  std::string hash() const;
};

// Seeds used by the stages, derived from the master seed by stage name.
std::map<std::string, uint64_t> derive_stage_seeds(uint64_t master_seed);

struct ArtifactInfo {
  std::string path;  // relative to the run directory
  std::string fnv1a64;
  uintmax_t bytes = 0;
};

struct LedgerEntry {
  std::string stage;
  double epsilon_spent = 0.0;
};

struct RunManifest {
  std::string config_hash;
  std::string config_json;
  std::map<std::string, std::string> module_versions;
  std::map<std::string, uint64_t> seeds;
  std::map<std::string, ArtifactInfo> artifacts;
  std::string arm;  // "dp" or "non-private"
  std::optional<PrivacySpend> spend;
  double noise_multiplier = 0.0;
  double sampling_rate = 0.0;
  int64_t steps = 0;
  std::vector<LedgerEntry> budget_ledger;
  bool deterministic = true;

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
};

std::string file_fnv1a64(const std::filesystem::path& path);

// Everything an end-to-end run produces, kept in memory for callers such as
// the acceptance harness.
struct RunOutputs {
  RunManifest manifest;
  std::filesystem::path run_dir;
  AttributeSchema schema;
  Vocabulary vocab;
  std::vector<Record> train;  // original records, before injection
  std::vector<Record> training_corpus;  // what the model saw
  std::vector<Record> test;
  std::vector<Record> synthetic;
  std::vector<double> label_distribution;
  std::optional<TrainResult> training;
  EvalReport report;
  std::vector<DownstreamResult> original_downstream;
  std::string attack_json;
};

using ProgressFn = std::function<void(const std::string& stage, const std::string& message)>;

// Runs corpus -> train -> generate -> evaluate -> canary into
// out_root/<config hash>/ and writes manifest.json last.
RunOutputs run_pipeline(const ExperimentConfig& config, const std::filesystem::path& out_root,
                        const ProgressFn& progress = nullptr);

struct ReplayResult {
  bool identical = true;
  std::vector<std::string> mismatched;
  std::filesystem::path replay_dir;
};

// Re-runs the manifest's config into `out_root` and compares artifact hashes.
ReplayResult replay_manifest(const std::filesystem::path& manifest_path, const std::filesystem::path& out_root,
                             const ProgressFn& progress = nullptr);

// Runs the config once as a DP arm and once as a non-private arm and writes
// comparison.json under out_root. Returns that JSON.
std::string run_paired(const ExperimentConfig& config, const std::filesystem::path& out_root,
                       const ProgressFn& progress = nullptr);

// Vocabulary from public material only: profile fragments, canary word lists
// and the subject paraphrase bank.
Vocabulary public_vocabulary(const CorpusProfile& profile);

// Checkpoint metadata: schema, vocabulary, profile name and label distribution.
std::string checkpoint_metadata(const AttributeSchema& schema, const Vocabulary& vocab, const std::string& profile,
                                const std::vector<double>& label_distribution);
void parse_checkpoint_metadata(const std::string& metadata, AttributeSchema* schema, Vocabulary* vocab,
                               std::string* profile, std::vector<double>* label_distribution);

std::string schema_to_json(const AttributeSchema& schema, const std::string& profile = "");

}  // namespace dpsynth

#endif  // DPSYNTH_PIPELINE_H_
