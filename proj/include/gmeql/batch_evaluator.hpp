#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gmeql/dataset.hpp"
#include "gmeql/network.hpp"

namespace gmeql {

/// Evaluates one network instance over a whole dataset at once, layer by
/// layer, and back-propagates the mean absolute error by hand.
///
/// This is the training hot path. It computes the same quantities as
/// mae_on_tape() followed by Tape::backward(); the test suite checks the two
/// against each other. Holds scratch buffers, so use one evaluator per thread.
class BatchEvaluator {
 public:
  BatchEvaluator(const Network& net, const Dataset& data);

  std::size_t rows() const { return rows_; }

  double mae(std::span<const double> v, std::span<const double> w);
  /// Network outputs for every row.
  std::span<const double> predict(std::span<const double> v, std::span<const double> w);

  /// Forward pass, then adds scale * dMAE/dw to `dw` (skipped when empty) and
  /// scale * dMAE/dv to `dv` for every connection c with need_dv[c] != 0.
  /// Returns the MAE.
  double mae_and_gradient(std::span<const double> v, std::span<const double> w, double scale,
                          std::span<const std::uint8_t> need_dv, std::span<double> dv,
                          std::span<double> dw);

 private:
  void run_forward(std::span<const double> v, std::span<const double> w);

  const Network& net_;
  std::size_t rows_;
  std::vector<double> targets_;
  // Node outputs per layer, [node * rows + r]. Layer 0 holds inputs and the
  // constant column.
  std::vector<std::vector<double>> outputs_;
  std::vector<std::vector<double>> output_grads_;
  // Local derivative of power nodes, filled by the forward pass.
  std::vector<std::vector<double>> derivs_;
  // Per connection: the V-weighted mix of the previous layer, before w.
  std::vector<double> mix_;
  // Per connection: w times the gradient at the node input, during backward.
  std::vector<double> dmix_;
  std::vector<double> dv_scratch_;
  // First connection of each layer; entry layer_count() is connection_count().
  std::vector<std::size_t> layer_first_;
  std::vector<double> scratch_;
};

}  // namespace gmeql
