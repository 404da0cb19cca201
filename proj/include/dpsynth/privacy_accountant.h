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

#ifndef DPSYNTH_PRIVACY_ACCOUNTANT_H_
#define DPSYNTH_PRIVACY_ACCOUNTANT_H_

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpsynth {

// T-fold composition of the Poisson-subsampled Gaussian mechanism.
struct MechanismSpec {
  double noise_multiplier = 0.0;
  double sampling_rate = 1.0;
  int64_t steps = 0;
};

struct PrivacySpend {
  double epsilon = 0.0;
  double delta = 0.0;
  std::string accountant_name = "rdp";
  std::optional<double> optimal_order;
};

class UnreachableTargetError : public std::runtime_error {
 public:
  UnreachableTargetError(const std::string& what, double sigma_low, double eps_low, double sigma_high,
                         double eps_high)
      : std::runtime_error(what),
        sigma_low(sigma_low),
        eps_low(eps_low),
        sigma_high(sigma_high),
        eps_high(eps_high) {}
  double sigma_low, eps_low, sigma_high, eps_high;
};

inline constexpr double kMinNoiseMultiplier = 0.3;
inline constexpr double kMaxNoiseMultiplier = 100.0;

// Integer Renyi orders 2..256.
std::vector<int> default_rdp_orders();

// Renyi DP of one application of the subsampled Gaussian mechanism at each
// order. q = 1 is the plain Gaussian, alpha / (2 sigma^2). sigma = 0 yields
// +infinity for every order.
std::vector<double> rdp_subsampled_gaussian(double sigma, double q, std::span<const int> orders);

// Converts a composed RDP curve to (epsilon, delta) with the conversion
//   eps = rdp(a) + log1p(-1/a) - (log(delta) + log(a)) / (a - 1),
// minimized over the orders (never below 0).
PrivacySpend epsilon_from_rdp(std::span<const int> orders, std::span<const double> rdp, double delta);

PrivacySpend compute_epsilon(const MechanismSpec& spec, double delta);
PrivacySpend compute_epsilon(const MechanismSpec& spec, double delta, std::span<const int> orders);

// Smallest sigma in [kMinNoiseMultiplier, kMaxNoiseMultiplier] (to within a 1%
// relative epsilon bracket) such that compute_epsilon(...).epsilon <= target.
// Throws UnreachableTargetError when the target lies outside the range.
double calibrate_sigma(double target_epsilon, double delta, double q, int64_t steps);

// delta = 1 / (N ln N).
double delta_for_dataset_size(size_t n);

// Caches the per-step RDP curve so epsilon after any step count is cheap.
class RdpAccountant {
 public:
  RdpAccountant(double sigma, double q, std::vector<int> orders = default_rdp_orders());
  PrivacySpend spend(int64_t steps, double delta) const;

 private:
  std::vector<int> orders_;
  std::vector<double> per_step_;
};

}  // namespace dpsynth

#endif  // DPSYNTH_PRIVACY_ACCOUNTANT_H_
