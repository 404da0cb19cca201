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

// Independent reference computations shared by the unit tests and the
// acceptance binary. None of these call into the library code they check.

#ifndef DPSYNTH_TESTS_ORACLES_H_
#define DPSYNTH_TESTS_ORACLES_H_

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace testing_oracles {

// (sigma, q) points for the subsampled-Gaussian comparison.
inline constexpr std::array<std::pair<double, double>, 5> kAccountantGrid = {
    {{0.7, 0.2}, {0.8, 0.01}, {1.0, 0.05}, {1.5, 0.1}, {2.0, 0.02}}};

// Full-batch, single-step noise multipliers at delta = 1e-5 from the
// continuous-order minimization below (frozen).
inline constexpr std::array<std::pair<double, double>, 3> kFullBatchSigma = {{{1.0, 4.0451}, {4.0, 1.1576}, {8.0, 0.6377}}};

// Area for two disjoint bins, c = 5, 25-point grid (frozen).
inline constexpr double kTwoBinMauve = 0.004072096261961256;

inline double log_add_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

// Renyi divergence of order alpha between the subsampled mixture
// (1-q) N(0, s^2) + q N(1, s^2) and N(0, s^2), by trapezoidal integration of
// E_{z ~ N(0, s^2)}[(mixture / base)^alpha] in log space.
inline double rdp_by_quadrature(double sigma, double q, int alpha, int points = 200001) {
  const double lo = -40.0 * sigma;
  const double hi = alpha + 40.0 * sigma;
  const double dz = (hi - lo) / (points - 1);
  const double log_norm = -0.5 * std::log(2.0 * M_PI * sigma * sigma);
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  double acc = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < points; ++i) {
    const double z = lo + i * dz;
    const double log_ratio = log_add_exp(log_1mq, log_q + (2.0 * z - 1.0) / (2.0 * sigma * sigma));
    double term = log_norm - z * z / (2.0 * sigma * sigma) + alpha * log_ratio + std::log(dz);
    if (i == 0 || i == points - 1) term += std::log(0.5);
    acc = log_add_exp(acc, term);
  }
  return acc / (alpha - 1);
}

// Epsilon of one full-batch Gaussian step minimized over real orders > 1.
inline double full_batch_epsilon(double sigma, double delta) {
  auto eps = [&](double a) {
    return a / (2.0 * sigma * sigma) + std::log1p(-1.0 / a) - (std::log(delta) + std::log(a)) / (a - 1.0);
  };
  double best_a = 1.5;
  double best = eps(best_a);
  for (double la = std::log(1.001); la < std::log(1e5); la += 0.001) {
    const double v = eps(std::exp(la));
    if (v < best) {
      best = v;
      best_a = std::exp(la);
    }
  }
  // Golden-section refinement around the grid minimum.
  double a = best_a * 0.99, b = best_a * 1.01;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int i = 0; i < 100; ++i) {
    const double c = b - g * (b - a), d = a + g * (b - a);
    if (eps(c) < eps(d)) {
      b = d;
    } else {
      a = c;
    }
  }
  return std::max(0.0, std::min(best, eps(0.5 * (a + b))));
}

inline double full_batch_sigma(double target, double delta) {
  double lo = 0.05, hi = 100.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (full_batch_epsilon(mid, delta) > target ? lo : hi) = mid;
  }
  return hi;
}

inline double sq_dist(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    const double d = a(i, k) - b(j, k);
    s += d * d;
  }
  return s;
}

struct PrOracle {
  double precision, recall, f1;
};

// Exhaustive all-pairs precision/recall with fully sorted neighbor lists.
inline PrOracle precision_recall_brute_force(const Eigen::MatrixXd& real, const Eigen::MatrixXd& synth, int k) {
  auto radii = [&](const Eigen::MatrixXd& x) {
    std::vector<double> r(static_cast<size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      std::vector<double> d;
      for (Eigen::Index j = 0; j < x.rows(); ++j) {
        if (j != i) d.push_back(sq_dist(x, i, x, j));
      }
      std::sort(d.begin(), d.end());
      r[static_cast<size_t>(i)] = d[static_cast<size_t>(k - 1)];
    }
    return r;
  };
  const std::vector<double> rr = radii(real), rs = radii(synth);
  auto covered = [](const Eigen::MatrixXd& q, const Eigen::MatrixXd& s, const std::vector<double>& r) {
    double hits = 0.0;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      bool in = false;
      for (Eigen::Index j = 0; j < s.rows(); ++j) in = in || sq_dist(q, i, s, j) <= r[static_cast<size_t>(j)];
      hits += in ? 1.0 : 0.0;
    }
    return hits / static_cast<double>(q.rows());
  };
  PrOracle o{covered(synth, real, rr), covered(real, synth, rs), 0.0};
  if (o.precision > 0 && o.recall > 0) o.f1 = 2 * o.precision * o.recall / (o.precision + o.recall);
  return o;
}

// Frechet distance with Tr((S1 S2)^{1/2}) taken as the sum of square roots of
// the eigenvalues of the (non-symmetric) product S1 S2.
inline double fid_by_product_eigenvalues(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  auto moments = [](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    const Eigen::Index n = x.rows(), d = x.cols();
    mu = Eigen::VectorXd::Zero(d);
    for (Eigen::Index i = 0; i < n; ++i) mu += x.row(i).transpose();
    mu /= static_cast<double>(n);
    cov = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd c = x.row(i).transpose() - mu;
      cov += c * c.transpose();
    }
    cov /= static_cast<double>(n - 1);
  };
  Eigen::VectorXd m1, m2;
  Eigen::MatrixXd c1, c2;
  moments(a, m1, c1);
  moments(b, m2, c2);
  Eigen::EigenSolver<Eigen::MatrixXd> es(c1 * c2);
  double tr = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) tr += std::sqrt(std::max(0.0, es.eigenvalues()[i].real()));
  return (m1 - m2).squaredNorm() + c1.trace() + c2.trace() - 2.0 * tr;
}

// sup_x |F_a(x) - F_b(x)| evaluated at every sample point.
inline double ks_by_ecdf(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> all = a;
  all.insert(all.end(), b.begin(), b.end());
  double best = 0.0;
  for (double v : all) {
    const double fa = static_cast<double>(std::count_if(a.begin(), a.end(), [&](double x) { return x <= v; })) / a.size();
    const double fb = static_cast<double>(std::count_if(b.begin(), b.end(), [&](double x) { return x <= v; })) / b.size();
    best = std::max(best, std::abs(fa - fb));
  }
  return best;
}

// Two disjoint bins: KL(Q || R_l) = -log(1 - l) and KL(P || R_l) = -log(l), so
// the frontier points are ((1 - l)^c, l^c).
inline double two_bin_mauve(double c, int m) {
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < m; ++i) {
    const double l = 1e-6 + i * (1.0 - 2e-6) / (m - 1);
    pts.emplace_back(std::pow(1.0 - l, c), std::pow(l, c));
  }
  std::sort(pts.begin(), pts.end());
  double area = pts.front().first * pts.front().second;
  for (size_t i = 1; i < pts.size(); ++i) {
    area += 0.5 * (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second);
  }
  return area;
}

}  // namespace testing_oracles

#endif  // DPSYNTH_TESTS_ORACLES_H_
