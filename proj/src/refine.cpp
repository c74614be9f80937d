#include "gmeql/refine.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "gmeql/autodiff.hpp"
#include "gmeql/functions.hpp"

namespace gmeql {

namespace {

using autodiff::Tape;
using autodiff::Var;

Var weight_leaf(Tape& tape, int id, double value) {
  return id >= 0 ? tape.parameter(static_cast<autodiff::ParamId>(id), value) : tape.constant(value);
}

Var record_node(const Expr& e, std::span<const double> x, Tape& tape) {
  switch (e.kind) {
    case Expr::Kind::variable:
      return tape.constant(x[static_cast<std::size_t>(e.variable)]);
    case Expr::Kind::constant:
      return tape.constant(e.value);
    case Expr::Kind::apply:
      break;
  }
  std::vector<Var> in;
  in.reserve(e.children.size());
  for (std::size_t j = 0; j < e.children.size(); ++j) {
    in.push_back(weight_leaf(tape, e.weight_ids[j], e.weights[j]) * record_node(e.children[j], x, tape));
  }
  return apply_function(e.function, in);
}

struct Linearization {
  Eigen::VectorXd residual;
  Eigen::MatrixXd jacobian;
  double sse = 0.0;
};

Linearization linearize(const ExprTree& tree, const Dataset& data, const std::vector<int>& ids) {
  Linearization lin;
  const auto rows = static_cast<Eigen::Index>(data.rows());
  lin.residual.resize(rows);
  lin.jacobian.setZero(rows, static_cast<Eigen::Index>(ids.size()));
  Tape tape;
  for (Eigen::Index r = 0; r < rows; ++r) {
    tape.clear();
    const Var out = weight_leaf(tape, tree.gain_id, tree.gain) *
                    record_node(tree.root, data.row(static_cast<std::size_t>(r)), tape);
    lin.residual[r] = out.value() - data.targets[static_cast<std::size_t>(r)];
    const auto grad = tape.backward(out);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      lin.jacobian(r, static_cast<Eigen::Index>(k)) = grad[static_cast<autodiff::ParamId>(ids[k])];
    }
  }
  lin.sse = lin.residual.squaredNorm();
  return lin;
}

}  // namespace

RefineResult refine_weights(ExprTree& tree, const Dataset& data, int max_iterations) {
  RefineResult result;
  std::vector<int> ids = weight_ids(tree);
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.empty() || data.rows() == 0) return result;

  // Ids not present in the tree are never read.
  std::vector<double> w(static_cast<std::size_t>(ids.back()) + 1, 0.0);
  if (tree.gain_id >= 0) w[static_cast<std::size_t>(tree.gain_id)] = tree.gain;
  std::vector<const Expr*> stack{&tree.root};
  while (!stack.empty()) {
    const Expr* e = stack.back();
    stack.pop_back();
    for (std::size_t j = 0; j < e->children.size(); ++j) {
      if (e->weight_ids[j] >= 0) w[static_cast<std::size_t>(e->weight_ids[j])] = e->weights[j];
      stack.push_back(&e->children[j]);
    }
  }

  Linearization lin = linearize(tree, data, ids);
  result.initial_sse = lin.sse;
  result.final_sse = lin.sse;
  if (!std::isfinite(lin.sse)) return result;

  double mu = 1e-3;
  ExprTree trial = tree;
  for (int it = 0; it < max_iterations; ++it) {
    result.iterations = it + 1;
    const Eigen::MatrixXd jtj = lin.jacobian.transpose() * lin.jacobian;
    const Eigen::VectorXd g = lin.jacobian.transpose() * lin.residual;
    if (!jtj.allFinite() || !g.allFinite()) break;
    bool improved = false;
    while (mu < 1e16) {
      Eigen::MatrixXd a = jtj;
      for (Eigen::Index k = 0; k < a.rows(); ++k) a(k, k) += mu * std::max(jtj(k, k), 1e-12);
      const Eigen::VectorXd step = a.ldlt().solve(-g);
      if (!step.allFinite()) {
        mu *= 4.0;
        continue;
      }
      std::vector<double> candidate = w;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        candidate[static_cast<std::size_t>(ids[k])] += step[static_cast<Eigen::Index>(k)];
      }
      trial = tree;
      assign_weights(trial, candidate);
      Linearization next = linearize(trial, data, ids);
      if (std::isfinite(next.sse) && next.sse < lin.sse) {
        const double gain = lin.sse - next.sse;
        w = std::move(candidate);
        tree = trial;
        lin = std::move(next);
        mu = std::max(mu / 3.0, 1e-12);
        improved = gain > 1e-14 * std::max(lin.sse, 1e-300);
        break;
      }
      mu *= 4.0;
    }
    result.final_sse = lin.sse;
    if (!improved) break;
  }
  return result;
}

}  // namespace gmeql
