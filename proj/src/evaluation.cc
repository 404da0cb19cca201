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
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <Eigen/Eigenvalues>

#include "dpsynth/parallel.h"
#include "dpsynth/rng.h"
#include "json.hpp"

namespace dpsynth {
namespace {

using ordered_json = nlohmann::ordered_json;

// (bucket, summed signed count) for every bucket touched by the text.
std::vector<std::pair<int, double>> hashed_counts(std::string_view text, const FeaturizerConfig& config) {
  std::string padded;
  padded.reserve(text.size() + 2);
  padded.push_back(' ');
  padded.append(text);
  padded.push_back(' ');
  std::vector<std::pair<int, double>> hits;
  for (int n : config.orders) {
    const uint64_t basis = splitmix64(config.seed ^ static_cast<uint64_t>(n));
    for (size_t i = 0; i + static_cast<size_t>(n) <= padded.size(); ++i) {
      const uint64_t h = fnv1a64(std::string_view(padded).substr(i, static_cast<size_t>(n)), basis);
      const int bucket = static_cast<int>(h % static_cast<uint64_t>(config.dim));
      hits.emplace_back(bucket, (h >> 63) ? -1.0 : 1.0);
    }
  }
  std::sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::pair<int, double>> merged;
  for (const auto& [bucket, sign] : hits) {
    if (!merged.empty() && merged.back().first == bucket) {
      merged.back().second += sign;
    } else {
      merged.emplace_back(bucket, sign);
    }
  }
  return merged;
}

size_t class_index(const std::vector<std::string>& classes, const std::string& value) {
  const auto it = std::find(classes.begin(), classes.end(), value);
  if (it == classes.end()) throw std::invalid_argument("unknown class value '" + value + "'");
  return static_cast<size_t>(it - classes.begin());
}

const std::string& attribute_value(const Record& r, const std::string& attribute) {
  const auto it = r.attributes.find(attribute);
  if (it == r.attributes.end()) throw std::invalid_argument("record lacks attribute '" + attribute + "'");
  return it->second;
}

// Row-major (classes x (dim + 1)) logits for one example.
void linear_logits(std::span<const double> w, size_t classes, size_t stride, const SparseFeatures& x,
                   std::vector<double>& logits) {
  logits.assign(classes, 0.0);
  for (size_t c = 0; c < classes; ++c) {
    const double* row = w.data() + c * stride;
    double s = row[stride - 1];
    for (size_t j = 0; j < x.index.size(); ++j) s += row[x.index[j]] * x.value[j];
    logits[c] = s;
  }
}

// In-place softmax; returns log-sum-exp.
double softmax(std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    z += x;
  }
  for (double& x : v) x /= z;
  return m + std::log(z);
}

// Adds scale * (softmax - onehot) (x) [x, 1] into grad; returns the example loss.
double add_example_gradient(std::span<const double> w, size_t classes, size_t stride, const SparseFeatures& x,
                            size_t label, double scale, std::span<double> grad, std::vector<double>& scratch) {
  linear_logits(w, classes, stride, x, scratch);
  const double label_logit = scratch[label];
  const double lse = softmax(scratch);
  for (size_t c = 0; c < classes; ++c) {
    const double coef = scale * (scratch[c] - (c == label ? 1.0 : 0.0));
    double* row = grad.data() + c * stride;
    for (size_t j = 0; j < x.index.size(); ++j) row[x.index[j]] += coef * x.value[j];
    row[stride - 1] += coef;
  }
  return lse - label_logit;
}

std::vector<size_t> sample_indices(size_t n, size_t m, uint64_t seed) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  if (m >= n) return idx;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void check_points(const Eigen::MatrixXd& m, const char* what) {
  if (!m.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite embeddings");
}

double quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

// Square root of a symmetric PSD matrix; eigenvalues in [-1e-8, 0) are clipped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw std::domain_error("fid: eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-8) throw std::domain_error("fid: matrix has a strongly negative eigenvalue");
    ev[i] = std::sqrt(std::max(0.0, ev[i]));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, Eigen::RowVectorXd* mean) {
  *mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - *mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  if (x.rows() <= x.cols()) cov.diagonal().array() += 1e-6;
  return cov;
}

ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json stats_json(const LengthStats& s) {
  ordered_json j;
  j["count"] = s.count;
  j["mean"] = s.mean;
  j["median"] = s.median;
  j["deciles"] = s.deciles;
  j["bin_width"] = s.bin_width;
  j["histogram"] = s.histogram;
  j["truncated_fraction"] = s.truncated_fraction;
  return j;
}

ordered_json length_json(const LengthReport& r) {
  ordered_json j;
  j["original"] = stats_json(r.original);
  j["synthetic"] = stats_json(r.synthetic);
  j["ks_statistic"] = r.ks_statistic;
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Featurizer

Featurizer::Featurizer(FeaturizerConfig config) : config_(std::move(config)), idf_(static_cast<size_t>(config_.dim), 1.0) {
  if (config_.dim <= 0) throw std::invalid_argument("featurizer: dim must be positive");
  if (config_.orders.empty()) throw std::invalid_argument("featurizer: no n-gram orders");
  for (int n : config_.orders) {
    if (n <= 0) throw std::invalid_argument("featurizer: n-gram orders must be positive");
  }
}

void Featurizer::fit(std::span<const std::string> texts) {
  if (!config_.idf) return;
  std::vector<double> df(static_cast<size_t>(config_.dim), 0.0);
  for (const std::string& t : texts) {
    for (const auto& [bucket, count] : hashed_counts(t, config_)) df[static_cast<size_t>(bucket)] += 1.0;
  }
  const double n = static_cast<double>(texts.size());
  for (size_t b = 0; b < df.size(); ++b) idf_[b] = std::log((1.0 + n) / (1.0 + df[b])) + 1.0;
}

SparseFeatures Featurizer::sparse(std::string_view text) const {
  SparseFeatures out;
  for (const auto& [bucket, count] : hashed_counts(text, config_)) {
    if (count == 0.0) continue;
    out.index.push_back(bucket);
    out.value.push_back(count * idf_[static_cast<size_t>(bucket)]);
  }
  if (config_.normalize) {
    double norm = 0.0;
    for (double v : out.value) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& v : out.value) v /= norm;
    }
  }
  return out;
}

Eigen::VectorXd Featurizer::dense(std::string_view text) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(config_.dim);
  const SparseFeatures s = sparse(text);
  for (size_t j = 0; j < s.index.size(); ++j) v[s.index[j]] = s.value[j];
  return v;
}

Eigen::MatrixXd Featurizer::embed(std::span<const std::string> texts) const {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(texts.size()), config_.dim);
  for (size_t i = 0; i < texts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = dense(texts[i]).transpose();
  return m;
}

std::vector<std::string> texts_of(std::span<const Record> records) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const Record& r : records) out.push_back(r.text);
  return out;
}

// ---------------------------------------------------------------------------
// Classifier

size_t TextClassifier::predict_index(std::string_view text) const {
  const SparseFeatures x = featurizer.sparse(text);
  std::vector<double> logits;
  linear_logits(std::span<const double>(weights.data(), static_cast<size_t>(weights.size())), classes.size(),
                static_cast<size_t>(weights.cols()), x, logits);
  return static_cast<size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

const std::string& TextClassifier::predict(std::string_view text) const { return classes[predict_index(text)]; }

double TextClassifier::accuracy(std::span<const Record> records) const {
  if (records.empty()) throw std::invalid_argument("accuracy: no records");
  size_t correct = 0;
  for (const Record& r : records) {
    if (predict(r.text) == attribute_value(r, attribute)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

TextClassifier train_downstream_classifier(std::span<const Record> train, const AttributeSchema& schema,
                                           const std::string& attribute, const ClassifierConfig& config) {
  const auto attr = schema.index_of(attribute);
  if (!attr) throw std::invalid_argument("unknown attribute '" + attribute + "'");
  if (config.epochs <= 0 || config.batch_size <= 0 || !(config.learning_rate > 0.0)) {
    throw std::invalid_argument("classifier: invalid training parameters");
  }
  TextClassifier clf{attribute, schema.attributes()[*attr].values, Featurizer(config.features), {}, std::nullopt};
  std::vector<size_t> labels;
  labels.reserve(train.size());
  for (const Record& r : train) labels.push_back(class_index(clf.classes, attribute_value(r, attribute)));
  std::vector<size_t> distinct = labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) throw std::invalid_argument("classifier: training set has fewer than two classes");

  std::vector<SparseFeatures> features(train.size());
  parallel_for(train.size(), config.num_threads, [&](size_t i) { features[i] = clf.featurizer.sparse(train[i].text); });

  const size_t n_classes = clf.classes.size();
  const size_t stride = static_cast<size_t>(config.features.dim) + 1;
  const size_t dim = n_classes * stride;
  std::vector<double> w(dim, 0.0);

  if (config.dp) {
    DpSgdConfig dp = *config.dp;
    dp.seed = derive_seed(config.seed, "dp-classifier");
    dp.num_threads = config.num_threads;
    const size_t n = train.size();
    const double delta = config.delta > 0.0 ? config.delta : delta_for_dataset_size(n);
    const int64_t steps = dp.total_steps(n);
    const double q = dp.sampling_rate(n);
    if (config.target_epsilon) dp.noise_multiplier = calibrate_sigma(*config.target_epsilon, delta, q, steps);
    DpSgdState state(dp, n, dim);
    auto gradient = [&](size_t i, std::span<double> g) {
      std::fill(g.begin(), g.end(), 0.0);
      std::vector<double> scratch;
      return add_example_gradient(w, n_classes, stride, features[i], labels[i], 1.0, g, scratch);
    };
    for (int64_t t = 0; t < steps; ++t) {
      const std::vector<size_t> batch = state.sample_batch();
      state.step(w, batch, gradient);
    }
    clf.spend = dp.noise_multiplier > 0.0 ? compute_epsilon({dp.noise_multiplier, q, state.steps()}, delta)
                                          : PrivacySpend{std::numeric_limits<double>::infinity(), delta, "rdp", {}};
  } else {
    Optimizer optimizer(config.optimizer, config.learning_rate, dim);
    Rng rng(derive_seed(config.seed, "classifier-order"));
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::vector<double> grad(dim);
    std::vector<double> scratch;
    for (int e = 0; e < config.epochs; ++e) {
      rng.shuffle(order);
      for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
        const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
        const double scale = 1.0 / static_cast<double>(end - start);
        std::fill(grad.begin(), grad.end(), 0.0);
        for (size_t b = start; b < end; ++b) {
          add_example_gradient(w, n_classes, stride, features[order[b]], labels[order[b]], scale, grad, scratch);
        }
        optimizer.apply(w, grad);
      }
    }
  }
  clf.weights = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      w.data(), static_cast<Eigen::Index>(n_classes), static_cast<Eigen::Index>(stride));
  return clf;
}

double constant_baseline_accuracy(std::span<const Record> train, std::span<const Record> test,
                                  const std::string& attribute) {
  if (train.empty() || test.empty()) throw std::invalid_argument("baseline: empty records");
  std::map<std::string, size_t> counts;
  for (const Record& r : train) ++counts[attribute_value(r, attribute)];
  const auto modal = std::max_element(counts.begin(), counts.end(),
                                      [](const auto& a, const auto& b) { return a.second < b.second; });
  size_t hits = 0;
  for (const Record& r : test) hits += attribute_value(r, attribute) == modal->first ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

// ---------------------------------------------------------------------------
// Precision / recall

double squared_distance(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

std::vector<double> knn_radii(const Eigen::MatrixXd& points, int k) {
  const auto n = static_cast<size_t>(points.rows());
  if (k < 1 || static_cast<size_t>(k) >= n) throw std::invalid_argument("knn_radii: need 1 <= k < n");
  std::vector<double> radii(n);
  parallel_for(n, 1, [&](size_t i) {
    std::vector<double> d;
    d.reserve(n - 1);
    for (size_t j = 0; j < n; ++j) {
      if (j != i) d.push_back(squared_distance(points.row(static_cast<Eigen::Index>(i)), points.row(static_cast<Eigen::Index>(j))));
    }
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    radii[i] = d[static_cast<size_t>(k - 1)];
  });
  return radii;
}

PrecisionRecall precision_recall_f1(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, int k,
                                    int num_threads) {
  check_points(real, "precision_recall");
  check_points(synth, "precision_recall");
  if (real.cols() != synth.cols()) throw std::invalid_argument("precision_recall: dimension mismatch");
  const std::vector<double> real_radii = knn_radii(real, k);
  const std::vector<double> synth_radii = knn_radii(synth, k);

  // Fraction of `queries` inside the k-NN ball of at least one of `support`.
  auto coverage = [&](const Eigen::MatrixXd& queries, const Eigen::MatrixXd& support, const std::vector<double>& radii) {
    const auto n = static_cast<size_t>(queries.rows());
    std::vector<char> inside(n, 0);
    parallel_for(n, num_threads, [&](size_t i) {
      for (Eigen::Index j = 0; j < support.rows(); ++j) {
        if (squared_distance(queries.row(static_cast<Eigen::Index>(i)), support.row(j)) <= radii[static_cast<size_t>(j)]) {
          inside[i] = 1;
          break;
        }
      }
    });
    return static_cast<double>(std::count(inside.begin(), inside.end(), 1)) / static_cast<double>(n);
  };

  PrecisionRecall pr;
  pr.precision = coverage(synth, real, real_radii);
  pr.recall = coverage(real, synth, synth_radii);
  pr.f1 = (pr.precision > 0.0 && pr.recall > 0.0) ? 2.0 * pr.precision * pr.recall / (pr.precision + pr.recall) : 0.0;
  return pr;
}

// ---------------------------------------------------------------------------
// FID

double fid(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth) {
  check_points(real, "fid");
  check_points(synth, "fid");
  if (real.cols() != synth.cols()) throw std::invalid_argument("fid: dimension mismatch");
  if (real.rows() < 2 || synth.rows() < 2) throw std::invalid_argument("fid: need at least two points per set");
  Eigen::RowVectorXd mu1, mu2;
  const Eigen::MatrixXd c1 = covariance(real, &mu1);
  const Eigen::MatrixXd c2 = covariance(synth, &mu2);
  const Eigen::MatrixXd s1 = psd_sqrt(c1);
  Eigen::MatrixXd m = s1 * c2 * s1;
  m = 0.5 * (m + m.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::domain_error("fid: eigendecomposition failed");
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()[i];
    if (ev < -1e-8) throw std::domain_error("fid: product has a strongly negative eigenvalue");
    trace_sqrt += std::sqrt(std::max(0.0, ev));
  }
  const double value = (mu1 - mu2).squaredNorm() + c1.trace() + c2.trace() - 2.0 * trace_sqrt;
  return std::max(0.0, value);
}

// ---------------------------------------------------------------------------
// MAUVE

std::vector<int> kmeans(const Eigen::MatrixXd& points, int k, uint64_t seed, int max_iterations) {
  const auto n = static_cast<size_t>(points.rows());
  if (k < 2) throw std::invalid_argument("kmeans: need at least two clusters");
  if (static_cast<size_t>(k) > n) throw std::invalid_argument("kmeans: more clusters than points");
  Rng rng(seed);
  Eigen::MatrixXd centers(k, points.cols());
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  size_t pick = static_cast<size_t>(rng.uniform_int(n));
  for (int c = 0; c < k; ++c) {
    centers.row(c) = points.row(static_cast<Eigen::Index>(pick));
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points.row(static_cast<Eigen::Index>(i)), centers.row(c)));
      total += nearest[i];
    }
    if (c + 1 < k) pick = total > 0.0 ? rng.categorical(nearest) : static_cast<size_t>(rng.uniform_int(n));
  }

  const Eigen::VectorXd point_norms = points.rowwise().squaredNorm();
  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    const Eigen::MatrixXd cross = points * centers.transpose();
    const Eigen::VectorXd center_norms = centers.rowwise().squaredNorm();
    bool changed = false;
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = point_norms[static_cast<Eigen::Index>(i)] - 2.0 * cross(static_cast<Eigen::Index>(i), c) + center_norms[c];
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<size_t> counts(static_cast<size_t>(k), 0);
    for (size_t i = 0; i < n; ++i) {
      sums.row(assign[i]) += points.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<size_t>(assign[i])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) centers.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<size_t>(c)]);
    }
  }
  return assign;
}

double mauve_from_histograms(std::span<const double> p_in, std::span<const double> q_in, double scale, int grid) {
  if (p_in.size() != q_in.size() || p_in.size() < 2) throw std::invalid_argument("mauve: need two histograms of equal size >= 2");
  if (grid < 2 || !(scale > 0.0)) throw std::invalid_argument("mauve: invalid grid or scale");
  auto normalized = [](std::span<const double> h) {
    double s = 0.0;
    for (double v : h) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("mauve: invalid histogram entry");
      s += v;
    }
    if (!(s > 0.0)) throw std::invalid_argument("mauve: empty histogram");
    std::vector<double> out(h.begin(), h.end());
    for (double& v : out) v /= s;
    return out;
  };
  const std::vector<double> p = normalized(p_in);
  const std::vector<double> q = normalized(q_in);
  auto kl = [](const std::vector<double>& a, const std::vector<double>& r) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
      if (a[i] > 0.0) s += a[i] * std::log(a[i] / r[i]);
    }
    return std::max(0.0, s);
  };

  // Grid mirrored around 1/2 so that swapping p and q mirrors the curve.
  const auto m = static_cast<size_t>(grid);
  std::vector<double> lambdas(m);
  const double lo = 1e-6;
  const double step = (1.0 - 2.0 * lo) / static_cast<double>(m - 1);
  for (size_t i = 0; i < m; ++i) {
    if (i <= m - 1 - i) {
      lambdas[i] = lo + static_cast<double>(i) * step;
      lambdas[m - 1 - i] = 1.0 - lambdas[i];
    }
  }
  if (m % 2 == 1) lambdas[m / 2] = 0.5;

  std::vector<std::pair<double, double>> points;
  std::vector<double> r(p.size());
  for (double lam : lambdas) {
    for (size_t i = 0; i < p.size(); ++i) r[i] = lam * p[i] + (1.0 - lam) * q[i];
    points.emplace_back(std::exp(-scale * kl(q, r)), std::exp(-scale * kl(p, r)));
  }
  // Pareto frontier, ordered by increasing x (decreasing y).
  std::sort(points.begin(), points.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second > b.second;
  });
  std::vector<std::pair<double, double>> frontier;
  double best_y = -1.0;
  for (const auto& pt : points) {
    if (pt.second > best_y) {
      frontier.push_back(pt);
      best_y = pt.second;
    }
  }
  std::reverse(frontier.begin(), frontier.end());
  std::vector<std::pair<double, double>> curve;
  curve.emplace_back(0.0, frontier.front().second);
  curve.insert(curve.end(), frontier.begin(), frontier.end());
  curve.emplace_back(frontier.back().first, 0.0);
  double area = 0.0;
  for (size_t i = 1; i < curve.size(); ++i) {
    area += 0.5 * (curve[i].first - curve[i - 1].first) * (curve[i].second + curve[i - 1].second);
  }
  return std::clamp(area, 0.0, 1.0);
}

double mauve(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, const MauveOptions& options) {
  check_points(real, "mauve");
  check_points(synth, "mauve");
  if (real.cols() != synth.cols()) throw std::invalid_argument("mauve: dimension mismatch");
  const auto n_real = static_cast<size_t>(real.rows());
  const size_t n = n_real + static_cast<size_t>(synth.rows());
  const int k = options.clusters > 0 ? options.clusters : static_cast<int>(std::min<size_t>(128, n / 20));
  if (k < 2) throw std::invalid_argument("mauve: fewer than two clusters");

  // Clustering the union in lexicographic row order makes the result
  // independent of which set is passed first.
  auto row_of = [&](size_t i) {
    return i < n_real ? real.row(static_cast<Eigen::Index>(i)) : synth.row(static_cast<Eigen::Index>(i - n_real));
  };
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const auto ra = row_of(a);
    const auto rb = row_of(b);
    for (Eigen::Index j = 0; j < ra.size(); ++j) {
      if (ra[j] != rb[j]) return ra[j] < rb[j];
    }
    return false;
  });
  Eigen::MatrixXd all(static_cast<Eigen::Index>(n), real.cols());
  for (size_t i = 0; i < n; ++i) all.row(static_cast<Eigen::Index>(i)) = row_of(order[i]);
  const std::vector<int> assign = kmeans(all, k, options.seed, options.max_iterations);

  std::vector<double> p(static_cast<size_t>(k), 1.0);
  std::vector<double> q(static_cast<size_t>(k), 1.0);
  for (size_t i = 0; i < n; ++i) {
    (order[i] < n_real ? p : q)[static_cast<size_t>(assign[i])] += 1.0;
  }
  return mauve_from_histograms(p, q, options.scale, options.grid);
}

// ---------------------------------------------------------------------------
// Lengths

std::vector<double> token_lengths(std::span<const Record> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const Record& r : records) out.push_back(static_cast<double>(split_words(r.text).size()));
  return out;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) return 0.0;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / static_cast<double>(a.size()) -
                             static_cast<double>(j) / static_cast<double>(b.size())));
  }
  return d;
}

LengthStats length_stats(std::span<const Record> records, int bin_width, int max_length) {
  if (bin_width <= 0) throw std::invalid_argument("length_stats: bin width must be positive");
  LengthStats s;
  s.bin_width = bin_width;
  s.count = records.size();
  std::vector<double> lengths = token_lengths(records);
  std::sort(lengths.begin(), lengths.end());
  if (max_length < 0) max_length = lengths.empty() ? 0 : static_cast<int>(lengths.back());
  s.histogram.assign(static_cast<size_t>(max_length / bin_width + 1), 0);
  if (lengths.empty()) return s;
  s.mean = std::accumulate(lengths.begin(), lengths.end(), 0.0) / static_cast<double>(lengths.size());
  s.median = quantile(lengths, 0.5);
  for (int d = 1; d <= 9; ++d) s.deciles.push_back(quantile(lengths, d / 10.0));
  for (double l : lengths) {
    const auto bin = std::min(s.histogram.size() - 1, static_cast<size_t>(l) / static_cast<size_t>(bin_width));
    ++s.histogram[bin];
  }
  size_t truncated = 0;
  for (const Record& r : records) truncated += r.truncated ? 1 : 0;
  s.truncated_fraction = static_cast<double>(truncated) / static_cast<double>(records.size());
  return s;
}

LengthReport length_report(std::span<const Record> original, std::span<const Record> synthetic) {
  const std::vector<double> a = token_lengths(original);
  const std::vector<double> b = token_lengths(synthetic);
  double longest = 0.0;
  for (double v : a) longest = std::max(longest, v);
  for (double v : b) longest = std::max(longest, v);
  LengthReport r;
  r.original = length_stats(original, 4, static_cast<int>(longest));
  r.synthetic = length_stats(synthetic, 4, static_cast<int>(longest));
  r.ks_statistic = ks_statistic(a, b);
  return r;
}

// ---------------------------------------------------------------------------
// Reports

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("total_variation: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

EvalReport evaluate(const AttributeSchema& schema, std::span<const Record> reference,
                    std::span<const Record> candidate, std::span<const Record> test, const EvaluationConfig& config) {
  EvalReport report;
  if (config.downstream) {
    for (const Attribute& attr : schema.attributes()) {
      ClassifierConfig cc = config.classifier;
      cc.seed = derive_seed(config.seed, "classifier", fnv1a64(attr.name));
      cc.num_threads = config.num_threads;
      const TextClassifier clf = train_downstream_classifier(candidate, schema, attr.name, cc);
      DownstreamResult r;
      r.attribute = attr.name;
      r.accuracy = clf.accuracy(test);
      r.baseline_accuracy = constant_baseline_accuracy(candidate, test, attr.name);
      if (clf.spend) r.epsilon = clf.spend->epsilon;
      report.downstream.push_back(r);
    }
  }
  if (config.distribution) {
    Featurizer featurizer(config.metric_features);
    const std::vector<std::string> ref_texts = texts_of(reference);
    featurizer.fit(ref_texts);
    auto subsample = [&](std::span<const Record> records, std::string_view stage) {
      const std::vector<size_t> idx =
          sample_indices(records.size(), config.metric_sample, derive_seed(config.seed, stage));
      std::vector<std::string> texts;
      texts.reserve(idx.size());
      for (size_t i : idx) texts.push_back(records[i].text);
      return featurizer.embed(texts);
    };
    const Eigen::MatrixXd real = subsample(reference, "metric-sample-reference");
    const Eigen::MatrixXd synth = subsample(candidate, "metric-sample-candidate");
    report.precision_recall = precision_recall_f1(real, synth, config.k, config.num_threads);
    report.fid = fid(real, synth);
    MauveOptions mo = config.mauve;
    mo.seed = derive_seed(config.seed, "mauve-kmeans");
    report.mauve = mauve(real, synth, mo);
  }
  if (config.lengths) report.lengths = length_report(reference, candidate);
  return report;
}

std::string to_json(const LengthReport& report) { return length_json(report).dump(); }

std::string to_json(const EvalReport& report) {
  ordered_json j;
  ordered_json ds = ordered_json::array();
  for (const DownstreamResult& r : report.downstream) {
    ordered_json e;
    e["attribute"] = r.attribute;
    e["accuracy"] = r.accuracy;
    e["baseline_accuracy"] = r.baseline_accuracy;
    if (r.epsilon) e["epsilon"] = number_or_null(*r.epsilon);
    ds.push_back(e);
  }
  j["downstream"] = ds;
  if (report.precision_recall) {
    j["precision"] = report.precision_recall->precision;
    j["recall"] = report.precision_recall->recall;
    j["f1"] = report.precision_recall->f1;
  }
  if (report.fid) j["fid"] = *report.fid;
  if (report.mauve) j["mauve"] = *report.mauve;
  if (report.label_tv_distance) j["label_tv_distance"] = *report.label_tv_distance;
  if (report.lengths) j["lengths"] = length_json(*report.lengths);
  return j.dump(2);
}

std::string histogram_csv(const LengthReport& report) {
  std::ostringstream out;
  out << "bin_start,original,synthetic\n";
  const size_t bins = std::max(report.original.histogram.size(), report.synthetic.histogram.size());
  for (size_t b = 0; b < bins; ++b) {
    out << b * static_cast<size_t>(report.original.bin_width) << ','
        << (b < report.original.histogram.size() ? report.original.histogram[b] : 0) << ','
        << (b < report.synthetic.histogram.size() ? report.synthetic.histogram[b] : 0) << '\n';
  }
  return out.str();
}

}  // namespace dpsynth
