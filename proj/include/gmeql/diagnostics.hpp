#pragma once

// Numerical self-checks run by `gmeql check`.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gmeql/gumbel.hpp"
#include "gmeql/network.hpp"

namespace gmeql {

struct CheckResult {
  std::string id;
  std::string description;
  double value = 0.0;      // measured error or deviation
  double threshold = 0.0;  // pass when value < threshold
  bool passed = false;
};

using ScoreGradientFn = std::function<std::vector<double>(
    std::span<const double>, std::span<const double>, gumbel::Temperature)>;

/// Replaceable pieces, so a deliberately broken implementation can be checked
/// to fail.
struct DiagnosticHooks {
  ScoreGradientFn score_gradient = [](std::span<const double> z, std::span<const double> v,
                                      gumbel::Temperature lambda) {
    return gumbel::score_gradient(z, v, lambda);
  };
};

/// Small random network with 1-3 inputs and 1-2 hidden layers of random kinds.
NetworkSpec random_network_spec(Rng& rng);

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

CheckResult check_network_gradients(int networks, std::uint64_t seed);
CheckResult check_gumbel_frequencies(int draws, std::uint64_t seed);
CheckResult check_score_gradient(const DiagnosticHooks& hooks, std::uint64_t seed);
CheckResult check_fixed_point(const DiagnosticHooks& hooks, std::uint64_t seed);
CheckResult check_density_normalization(std::uint64_t seed);

std::vector<CheckResult> run_diagnostics(const DiagnosticHooks& hooks = {},
                                         std::uint64_t seed = 20240607);

}  // namespace gmeql
