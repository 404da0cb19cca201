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


#include "dpsynth/evaluation.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include "json.hpp"

#include "dpsynth/rng.h"
#include "oracles.h"

namespace dpsynth {
namespace {

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, uint64_t seed, double scale = 1.0, double shift = 0.0) {
  Rng rng(seed);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = scale * rng.normal() + shift;
  return m;
}

std::vector<Record> records(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::vector<Record> out;
  for (const auto& [label, text] : rows) out.push_back(Record{{{"Kind", label}}, text, RecordSource::kOriginal});
  return out;
}

TEST(FeaturizerTest, SparseAndDenseAgree) {
  Featurizer f(FeaturizerConfig{.dim = 64, .orders = {2, 3}, .idf = false, .normalize = true, .seed = 1});
  const SparseFeatures s = f.sparse("the cat sat");
  const Eigen::VectorXd d = f.dense("the cat sat");
  EXPECT_TRUE(std::is_sorted(s.index.begin(), s.index.end()));
  double sq = 0.0;
  for (size_t i = 0; i < s.index.size(); ++i) {
    EXPECT_EQ(d[s.index[i]], s.value[i]);
    sq += s.value[i] * s.value[i];
  }
  EXPECT_NEAR(sq, 1.0, 1e-12);
  EXPECT_NEAR(d.norm(), 1.0, 1e-12);
  EXPECT_EQ(f.dense("the cat sat"), d);
  EXPECT_NE(f.dense("a dog ran"), d);
}

TEST(FeaturizerTest, IdfDownweightsCommonGrams) {
  Featurizer f(FeaturizerConfig{.dim = 1 << 16, .orders = {3}, .idf = true, .normalize = false, .seed = 2});
  const std::vector<std::string> docs{"abc xyz", "abc qrs", "abc tuv"};
  f.fit(docs);
  const SparseFeatures s = f.sparse("abc xyz");
  // " ab", "abc", "bc " appear in every document; " xy", "xyz", "yz " in one.
  std::vector<double> mags;
  for (double v : s.value) mags.push_back(std::abs(v));
  std::sort(mags.begin(), mags.end());
  ASSERT_GE(mags.size(), 6u);
  EXPECT_NEAR(mags.front(), 1.0, 1e-12);  // log(4/4) + 1
  EXPECT_NEAR(mags.back(), std::log(4.0 / 2.0) + 1.0, 1e-12);
}

TEST(ClassifierTest, LearnsSeparableLabels) {
  std::vector<std::pair<std::string, std::string>> rows;
  Rng rng(3);
  const std::vector<std::string> a{"pasta", "burger", "waiter"}, b{"massage", "salon", "facial"};
  for (int i = 0; i < 300; ++i) {
    const bool first = rng.bernoulli(0.5);
    const auto& bank = first ? a : b;
    rows.emplace_back(first ? "food" : "spa", "the " + bank[rng.uniform_int(3)] + " was fine today");
  }
  const auto data = records(rows);
  const AttributeSchema schema({{"Kind", {"food", "spa", "other"}}});
  ClassifierConfig cfg;
  const TextClassifier clf = train_downstream_classifier(std::span(data).first(200), schema, "Kind", cfg);
  EXPECT_EQ(clf.classes.size(), 3u);
  EXPECT_GE(clf.accuracy(std::span(data).subspan(200)), 0.99);
  EXPECT_EQ(clf.predict("the salon was fine today"), "spa");
  EXPECT_FALSE(clf.spend.has_value());

  ClassifierConfig dp = cfg;
  dp.dp = DpSgdConfig{};
  dp.dp->expected_batch_size = 50;
  dp.dp->epochs = 20;
  dp.dp->learning_rate = 0.05;
  dp.dp->optimizer = OptimizerKind::kAdam;
  dp.target_epsilon = 8.0;
  const TextClassifier priv = train_downstream_classifier(std::span(data).first(200), schema, "Kind", dp);
  ASSERT_TRUE(priv.spend.has_value());
  EXPECT_LE(priv.spend->epsilon, 8.0);
  EXPECT_GT(priv.accuracy(std::span(data).subspan(200)), 0.8);

  const auto one = records({{"food", "x"}, {"food", "y"}});
  EXPECT_THROW(train_downstream_classifier(one, schema, "Kind", cfg), std::invalid_argument);
  EXPECT_DOUBLE_EQ(constant_baseline_accuracy(one, data, "Kind"),
                   static_cast<double>(std::count_if(data.begin(), data.end(), [](const Record& r) {
                     return r.attributes.at("Kind") == "food";
                   })) / data.size());
}

TEST(PrecisionRecallTest, MatchesBruteForceOracleExactly) {
  const Eigen::MatrixXd real = gaussian(200, 5, 1);
  const Eigen::MatrixXd synth = gaussian(200, 5, 2, 1.3, 0.4);
  for (int k : {1, 3, 5}) {
    const PrecisionRecall pr = precision_recall_f1(real, synth, k, 3);
    const auto oracle = testing_oracles::precision_recall_brute_force(real, synth, k);
    EXPECT_EQ(pr.precision, oracle.precision) << k;
    EXPECT_EQ(pr.recall, oracle.recall) << k;
    EXPECT_EQ(pr.f1, oracle.f1) << k;
  }
  const PrecisionRecall same = precision_recall_f1(real, real);
  EXPECT_EQ(same.precision, 1.0);
  EXPECT_EQ(same.recall, 1.0);
}

TEST(PrecisionRecallTest, DisjointSetsScoreZero) {
  const PrecisionRecall pr = precision_recall_f1(gaussian(50, 3, 1), gaussian(50, 3, 2, 1.0, 100.0));
  EXPECT_EQ(pr.precision, 0.0);
  EXPECT_EQ(pr.recall, 0.0);
  EXPECT_EQ(pr.f1, 0.0);
}

TEST(KnnTest, RadiiOnALine) {
  Eigen::MatrixXd pts(4, 1);
  pts << 0.0, 1.0, 3.0, 7.0;
  EXPECT_EQ(knn_radii(pts, 1), (std::vector<double>{1.0, 1.0, 4.0, 16.0}));
  EXPECT_EQ(knn_radii(pts, 2), (std::vector<double>{9.0, 4.0, 9.0, 36.0}));
  EXPECT_THROW(knn_radii(pts, 4), std::invalid_argument);
}

TEST(FidTest, IdentityAndShift) {
  const Eigen::MatrixXd x = gaussian(500, 6, 3);
  EXPECT_LE(fid(x, x), 1e-8);
  Eigen::RowVectorXd mu(6);
  mu << 1.0, -2.0, 0.5, 0.0, 0.0, 3.0;
  const Eigen::MatrixXd y = x.rowwise() + mu;
  EXPECT_NEAR(fid(x, y), mu.squaredNorm(), 1e-8);
}

TEST(FidTest, MatchesProductEigenvalueOracle) {
  const Eigen::MatrixXd x = gaussian(400, 5, 4);
  Eigen::MatrixXd y = gaussian(300, 5, 5, 1.7, 0.3);
  y.col(1) += 0.8 * y.col(0);
  const double a = fid(x, y);
  const double b = testing_oracles::fid_by_product_eigenvalues(x, y);
  EXPECT_NEAR(a, b, 1e-8 * std::max(1.0, b));
  EXPECT_THROW(fid(x, gaussian(10, 4, 1)), std::invalid_argument);
}

TEST(FidTest, IsotropicScaleClosedForm) {
  // Identity covariance vs s^2 I: FID = d (1 - s)^2 in the population; the
  // sample version is checked against the oracle on the same data.
  const Eigen::MatrixXd x = gaussian(20000, 4, 6);
  const Eigen::MatrixXd y = gaussian(20000, 4, 7, 2.0);
  EXPECT_NEAR(fid(x, y), 4.0, 0.15);
}

TEST(MauveTest, TwoBinClosedForm) {
  const std::vector<double> p{1.0, 0.0}, q{0.0, 1.0};
  const double m = mauve_from_histograms(p, q, 5.0, 25);
  EXPECT_NEAR(m, testing_oracles::kTwoBinMauve, 1e-15);
  EXPECT_NEAR(m, testing_oracles::two_bin_mauve(5.0, 25), 1e-15);
  EXPECT_NEAR(mauve_from_histograms(q, p, 5.0, 25), m, 1e-15);
}

TEST(MauveTest, IdenticalHistogramsScoreOne) {
  const std::vector<double> p{3.0, 1.0, 6.0};
  EXPECT_NEAR(mauve_from_histograms(p, p), 1.0, 1e-12);
  const std::vector<double> q{1.0, 3.0, 6.0};
  const double m = mauve_from_histograms(p, q);
  EXPECT_GT(m, 0.0);
  EXPECT_LT(m, 1.0);
  EXPECT_THROW(mauve_from_histograms(p, std::vector<double>{1.0, 1.0}), std::invalid_argument);
}

TEST(MauveTest, EmbeddingLevel) {
  const Eigen::MatrixXd x = gaussian(400, 4, 8);
  EXPECT_GE(mauve(x, x), 1.0 - 1e-6);
  const double near = mauve(x, gaussian(400, 4, 9));
  const double far = mauve(x, gaussian(400, 4, 10, 1.0, 3.0));
  EXPECT_GT(near, far);
  EXPECT_LT(far, 0.2);
  EXPECT_EQ(mauve(x, gaussian(400, 4, 9)), near);
}

TEST(KmeansTest, RecoversSeparatedClusters) {
  Eigen::MatrixXd pts(90, 2);
  Rng rng(5);
  for (int i = 0; i < 90; ++i) {
    pts(i, 0) = 10.0 * (i % 3) + 0.1 * rng.normal();
    pts(i, 1) = 0.1 * rng.normal();
  }
  const auto a = kmeans(pts, 3, 1, 50);
  for (int i = 3; i < 90; ++i) EXPECT_EQ(a[i], a[i % 3]);
  EXPECT_NE(a[0], a[1]);
  EXPECT_NE(a[1], a[2]);
  EXPECT_NE(a[0], a[2]);
}

TEST(LengthTest, KsMatchesEcdfOracle) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a, b;
    for (int i = 0; i < 40; ++i) a.push_back(static_cast<double>(rng.uniform_int(30)));
    for (int i = 0; i < 55; ++i) b.push_back(static_cast<double>(rng.uniform_int(35)));
    EXPECT_NEAR(ks_statistic(a, b), testing_oracles::ks_by_ecdf(a, b), 1e-15);
  }
  EXPECT_EQ(ks_statistic({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_EQ(ks_statistic({1, 2}, {5, 6}), 1.0);
}

TEST(LengthTest, StatsAndHistogram) {
  std::vector<Record> rs;
  for (int n : {1, 2, 3, 4, 10}) {
    std::string text;
    for (int i = 0; i < n; ++i) text += "w ";
    rs.push_back(Record{{}, text, RecordSource::kSynthetic, n == 10, false});
  }
  const LengthStats s = length_stats(rs, 4);
  EXPECT_EQ(s.count, 5u);
  EXPECT_DOUBLE_EQ(s.mean, 4.0);
  EXPECT_DOUBLE_EQ(s.median, 3.0);
  ASSERT_EQ(s.deciles.size(), 9u);
  EXPECT_NEAR(s.deciles[0], 1.4, 1e-12);  // type-7 interpolation
  EXPECT_NEAR(s.deciles[8], 7.6, 1e-12);
  EXPECT_EQ(s.histogram, (std::vector<size_t>{3, 1, 1}));
  EXPECT_DOUBLE_EQ(s.truncated_fraction, 0.2);
  const LengthReport r = length_report(rs, rs);
  EXPECT_EQ(r.ks_statistic, 0.0);
  const auto j = nlohmann::json::parse(to_json(r));
  EXPECT_EQ(j["synthetic"]["count"], 5);
  const std::string csv = histogram_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "bin_start,original,synthetic");
}

TEST(ReportTest, TotalVariation) {
  EXPECT_DOUBLE_EQ(total_variation(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0}), 0.5);
  EXPECT_DOUBLE_EQ(total_variation(std::vector<double>{0.2, 0.8}, std::vector<double>{0.2, 0.8}), 0.0);
  EXPECT_THROW(total_variation(std::vector<double>{1.0}, std::vector<double>{0.5, 0.5}), std::invalid_argument);
}

TEST(ReportTest, EvaluateProducesEverySection) {
  const CorpusProfile p = reviews_profile();
  const auto data = generate_corpus(p.schema, 900, 1, p);
  const std::span<const Record> all(data);
  EvaluationConfig cfg;
  cfg.metric_sample = 300;
  cfg.mauve.clusters = 10;
  const EvalReport r = evaluate(p.schema, all.first(300), all.subspan(300, 300), all.subspan(600), cfg);
  ASSERT_EQ(r.downstream.size(), 2u);
  EXPECT_GT(r.downstream[0].accuracy, r.downstream[0].baseline_accuracy);
  ASSERT_TRUE(r.precision_recall && r.fid && r.mauve && r.lengths);
  EXPECT_GT(r.precision_recall->f1, 0.5);
  EXPECT_GT(*r.mauve, 0.5);
  const auto j = nlohmann::json::parse(to_json(r));
  for (const char* key : {"downstream", "precision", "recall", "f1", "fid", "mauve", "lengths"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  cfg.downstream = false;
  cfg.distribution = false;
  const EvalReport lean = evaluate(p.schema, all.first(300), all.subspan(300, 300), all.subspan(600), cfg);
  EXPECT_TRUE(lean.downstream.empty());
  EXPECT_FALSE(lean.fid.has_value());
  EXPECT_TRUE(lean.lengths.has_value());
}

}  // namespace
}  // namespace dpsynth
