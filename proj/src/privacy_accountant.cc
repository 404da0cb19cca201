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

#include "dpsynth/privacy_accountant.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dpsynth {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// log A_alpha for integer alpha, where
//   A_alpha = sum_k C(alpha, k) (1-q)^(alpha-k) q^k exp((k^2 - k) / (2 sigma^2)),
// the alpha-th moment of the privacy loss of the subsampled Gaussian.
double log_moment_int(double sigma, double q, int alpha) {
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double a = alpha;
  double acc = -kInf;
  for (int k = 0; k <= alpha; ++k) {
    const double log_binom = std::lgamma(a + 1.0) - std::lgamma(k + 1.0) - std::lgamma(a - k + 1.0);
    const double term = log_binom + k * log_q + (a - k) * log_1mq + (static_cast<double>(k) * k - k) / (2.0 * sigma * sigma);
    acc = log_add(acc, term);
  }
  return acc;
}

}  // namespace

std::vector<int> default_rdp_orders() {
  std::vector<int> orders;
  for (int a = 2; a <= 256; ++a) orders.push_back(a);
  return orders;
}

std::vector<double> rdp_subsampled_gaussian(double sigma, double q, std::span<const int> orders) {
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("sampling rate must lie in (0, 1]");
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise multiplier must be non-negative");
  std::vector<double> out;
  out.reserve(orders.size());
  for (int alpha : orders) {
    if (alpha < 2) throw std::invalid_argument("RDP orders must be integers >= 2");
    if (sigma == 0.0) {
      out.push_back(kInf);
    } else if (q == 1.0) {
      out.push_back(alpha / (2.0 * sigma * sigma));
    } else {
      out.push_back(std::max(0.0, log_moment_int(sigma, q, alpha) / (alpha - 1)));
    }
  }
  return out;
}

PrivacySpend epsilon_from_rdp(std::span<const int> orders, std::span<const double> rdp, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  if (orders.size() != rdp.size() || orders.empty()) throw std::invalid_argument("orders/rdp size mismatch");
  PrivacySpend best;
  best.delta = delta;
  best.epsilon = kInf;
  for (size_t i = 0; i < orders.size(); ++i) {
    const double a = orders[i];
    const double r = rdp[i];
    if (r < 0.0) throw std::invalid_argument("negative Renyi divergence");
    double eps;
    if (delta * delta + std::expm1(-r) > 0.0) {
      // delta <= sqrt(1 - exp(-KL)) already; nothing to pay.
      eps = 0.0;
    } else {
      eps = r + std::log1p(-1.0 / a) - (std::log(delta) + std::log(a)) / (a - 1.0);
    }
    if (eps < best.epsilon) {
      best.epsilon = eps;
      best.optimal_order = a;
    }
  }
  best.epsilon = std::max(0.0, best.epsilon);
  return best;
}

PrivacySpend compute_epsilon(const MechanismSpec& spec, double delta) {
  const std::vector<int> orders = default_rdp_orders();
  return compute_epsilon(spec, delta, orders);
}

PrivacySpend compute_epsilon(const MechanismSpec& spec, double delta, std::span<const int> orders) {
  if (spec.steps < 0) throw std::invalid_argument("steps must be non-negative");
  if (spec.steps == 0) {
    PrivacySpend zero;
    zero.delta = delta;
    return zero;
  }
  std::vector<double> rdp = rdp_subsampled_gaussian(spec.noise_multiplier, spec.sampling_rate, orders);
  for (double& r : rdp) r *= static_cast<double>(spec.steps);
  return epsilon_from_rdp(orders, rdp, delta);
}

double calibrate_sigma(double target_epsilon, double delta, double q, int64_t steps) {
  if (!(target_epsilon > 0.0)) throw std::invalid_argument("target epsilon must be positive");
  const std::vector<int> orders = default_rdp_orders();
  auto eps_at = [&](double sigma) { return compute_epsilon({sigma, q, steps}, delta, orders).epsilon; };

  double lo = kMinNoiseMultiplier;
  double hi = kMaxNoiseMultiplier;
  double eps_lo = eps_at(lo);
  double eps_hi = eps_at(hi);
  auto unreachable = [&](const char* why) {
    std::ostringstream msg;
    msg << "target epsilon " << target_epsilon << " unreachable (" << why << "): sigma=" << lo << " -> eps=" << eps_lo
        << ", sigma=" << hi << " -> eps=" << eps_hi;
    return UnreachableTargetError(msg.str(), lo, eps_lo, hi, eps_hi);
  };
  if (eps_hi > target_epsilon) throw unreachable("needs sigma above the maximum");
  if (eps_lo <= target_epsilon) throw unreachable("met below the minimum sigma");

  // Invariant: eps(lo) > target >= eps(hi). Stop once the epsilon bracket is
  // within 1% of the target.
  for (int iter = 0; iter < 200 && (eps_lo - eps_hi) > 0.01 * target_epsilon; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double eps_mid = eps_at(mid);
    if (eps_mid > target_epsilon) {
      lo = mid;
      eps_lo = eps_mid;
    } else {
      hi = mid;
      eps_hi = eps_mid;
    }
  }
  return hi;
}

double delta_for_dataset_size(size_t n) {
  if (n < 2) throw std::invalid_argument("dataset size must be at least 2 for the delta rule");
  const double nd = static_cast<double>(n);
  return 1.0 / (nd * std::log(nd));
}

RdpAccountant::RdpAccountant(double sigma, double q, std::vector<int> orders)
    : orders_(std::move(orders)), per_step_(rdp_subsampled_gaussian(sigma, q, orders_)) {}

PrivacySpend RdpAccountant::spend(int64_t steps, double delta) const {
  if (steps <= 0) {
    PrivacySpend zero;
    zero.delta = delta;
    return zero;
  }
  std::vector<double> rdp(per_step_);
  for (double& r : rdp) r *= static_cast<double>(steps);
  return epsilon_from_rdp(orders_, rdp, delta);
}

}  // namespace dpsynth
