#pragma once

#include "gmeql/dataset.hpp"
#include "gmeql/expression.hpp"

namespace gmeql {

struct RefineResult {
  int iterations = 0;
  double initial_sse = 0.0;
  double final_sse = 0.0;
};

/// Levenberg-Marquardt on the squared residuals of `tree` over `data`,
/// adjusting every weight slot that carries a connection id (slots sharing an
/// id stay tied). Leaves the tree unchanged when no step reduces the error.
RefineResult refine_weights(ExprTree& tree, const Dataset& data, int max_iterations);

}  // namespace gmeql
