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

#ifndef DPSYNTH_EVALUATION_H_
#define DPSYNTH_EVALUATION_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dpsynth/corpus.h"
#include "dpsynth/dp_training.h"
#include "dpsynth/privacy_accountant.h"

namespace dpsynth {

// ---------------------------------------------------------------------------
// Features

struct SparseFeatures {
  std::vector<int> index;  // ascending
  std::vector<double> value;
};

struct FeaturizerConfig {
  int dim = 256;
  std::vector<int> orders = {2, 3, 4};
  // Inverse document frequency weights, learned by fit().
  bool idf = true;
  bool normalize = true;
  uint64_t seed = 0x5eed;
};

// Signed feature hashing of character n-grams with optional TF-IDF weighting.
class Featurizer {
 public:
  explicit Featurizer(FeaturizerConfig config = {});

  void fit(std::span<const std::string> texts);

  SparseFeatures sparse(std::string_view text) const;
  Eigen::VectorXd dense(std::string_view text) const;
  // One row per text.
  Eigen::MatrixXd embed(std::span<const std::string> texts) const;

  const FeaturizerConfig& config() const { return config_; }

 private:
  FeaturizerConfig config_;
  std::vector<double> idf_;
};

std::vector<std::string> texts_of(std::span<const Record> records);

// ---------------------------------------------------------------------------
// Downstream classification

struct ClassifierConfig {
  FeaturizerConfig features{.dim = 4096, .orders = {2, 3, 4}, .idf = false, .normalize = true, .seed = 0x5eed};
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 0.01;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  uint64_t seed = 0;
  // Set to train with DP-SGD. expected_batch_size, epochs, learning_rate,
  // clip_norm and noise_multiplier are taken from here.
  std::optional<DpSgdConfig> dp;
  std::optional<double> target_epsilon;
  double delta = 0.0;  // 0: 1 / (N ln N)
  int num_threads = 1;
};

// Multinomial logistic regression over hashed features.
class TextClassifier {
 public:
  std::string attribute;
  std::vector<std::string> classes;
  Featurizer featurizer;
  // classes x (dim + 1); the last column is the bias.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> weights;
  std::optional<PrivacySpend> spend;

  size_t predict_index(std::string_view text) const;
  const std::string& predict(std::string_view text) const;
  double accuracy(std::span<const Record> records) const;
};

// Throws std::invalid_argument when fewer than two classes occur in `train`.
TextClassifier train_downstream_classifier(std::span<const Record> train, const AttributeSchema& schema,
                                           const std::string& attribute, const ClassifierConfig& config);

// Accuracy on `test` of always predicting the most frequent class of `train`.
double constant_baseline_accuracy(std::span<const Record> train, std::span<const Record> test,
                                  const std::string& attribute);

// ---------------------------------------------------------------------------
// Distribution metrics (rows are points)

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

double squared_distance(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b);

// Squared distance from each row to its k-th nearest other row.
std::vector<double> knn_radii(const Eigen::MatrixXd& points, int k);

PrecisionRecall precision_recall_f1(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, int k = 3,
                                    int num_threads = 1);

// Frechet distance between Gaussian fits. Throws std::domain_error on
// eigenvalues below -1e-8.
double fid(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth);

struct MauveOptions {
  int clusters = 0;  // 0: min(128, n / 20)
  double scale = 5.0;
  int grid = 25;
  int max_iterations = 100;
  uint64_t seed = 0;
};

// Cluster assignment of each row by seeded k-means++ / Lloyd.
std::vector<int> kmeans(const Eigen::MatrixXd& points, int k, uint64_t seed, int max_iterations);

// Divergence-frontier area for two histograms (used as given, no smoothing).
double mauve_from_histograms(std::span<const double> p, std::span<const double> q, double scale = 5.0,
                             int grid = 25);

double mauve(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, const MauveOptions& options = {});

// ---------------------------------------------------------------------------
// Lengths

struct LengthStats {
  size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  std::vector<double> deciles;  // 10%, 20%, ..., 90%
  int bin_width = 4;
  std::vector<size_t> histogram;
  double truncated_fraction = 0.0;
};

struct LengthReport {
  LengthStats original;
  LengthStats synthetic;
  double ks_statistic = 0.0;
};

// Token counts of the record bodies.
std::vector<double> token_lengths(std::span<const Record> records);
double ks_statistic(std::vector<double> a, std::vector<double> b);
LengthStats length_stats(std::span<const Record> records, int bin_width = 4, int max_length = -1);
LengthReport length_report(std::span<const Record> original, std::span<const Record> synthetic);

// ---------------------------------------------------------------------------
// Reports

struct DownstreamResult {
  std::string attribute;
  double accuracy = 0.0;
  double baseline_accuracy = 0.0;
  std::optional<double> epsilon;
};

struct EvaluationConfig {
  FeaturizerConfig metric_features;
  // Points per set for precision/recall, FID and MAUVE (subsampled with the seed).
  size_t metric_sample = 2000;
  int k = 3;
  MauveOptions mauve;
  ClassifierConfig classifier;
  bool downstream = true;
  bool distribution = true;
  bool lengths = true;
  uint64_t seed = 0;
  int num_threads = 1;
};

struct EvalReport {
  std::vector<DownstreamResult> downstream;
  std::optional<PrecisionRecall> precision_recall;
  std::optional<double> fid;
  std::optional<double> mauve;
  std::optional<LengthReport> lengths;
  std::optional<double> label_tv_distance;
};

// Trains classifiers on `candidate`, scores them on the original `test`
// records, and compares `candidate` against `reference` with the distribution
// metrics and the length report.
EvalReport evaluate(const AttributeSchema& schema, std::span<const Record> reference,
                    std::span<const Record> candidate, std::span<const Record> test, const EvaluationConfig& config);

double total_variation(std::span<const double> p, std::span<const double> q);

std::string to_json(const EvalReport& report);
std::string to_json(const LengthReport& report);
// "bin_start,original,synthetic" rows.
std::string histogram_csv(const LengthReport& report);

}  // namespace dpsynth

#endif  // DPSYNTH_EVALUATION_H_
