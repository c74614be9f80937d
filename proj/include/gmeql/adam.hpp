#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gmeql {

/// Per-parameter moment estimates for Adam.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;

  explicit AdamState(std::size_t size = 0) : m(size, 0.0), v(size, 0.0) {}
  void reset(std::size_t size);
};

/// One bias-corrected Adam step that descends `grads`. Non-finite gradient
/// entries are treated as zero; the number of such entries is returned.
std::size_t adam_step(AdamState& state, std::span<double> params, std::span<const double> grads,
                      double learning_rate);

}  // namespace gmeql
