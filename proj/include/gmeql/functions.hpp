#pragma once

#include <optional>
#include <span>
#include <string_view>

#include "gmeql/autodiff.hpp"

namespace gmeql {

/// Elementary functions a hidden node can compute.
enum class FunctionKind {
  add,
  sub,
  mul,
  div,
  sin,
  cos,
  sqrt,
  pow2,
  pow3,
  pow4,
  pow5,
  pow6,
  sum_n,
};

inline constexpr FunctionKind kAllFunctionKinds[] = {
    FunctionKind::add,  FunctionKind::sub,  FunctionKind::mul,  FunctionKind::div,
    FunctionKind::sin,  FunctionKind::cos,  FunctionKind::sqrt, FunctionKind::pow2,
    FunctionKind::pow3, FunctionKind::pow4, FunctionKind::pow5, FunctionKind::pow6,
    FunctionKind::sum_n};

std::string_view function_name(FunctionKind kind);
std::optional<FunctionKind> parse_function_kind(std::string_view name);

bool is_unary(FunctionKind kind);
bool is_commutative(FunctionKind kind);
/// Exponent of a pow kind, 0 otherwise.
int power_of(FunctionKind kind);
int arity(FunctionKind kind, int sum_arity);

/// Guarded scalar evaluation, identical to the autodiff primitives.
double apply_function(FunctionKind kind, std::span<const double> inputs);

/// Records `kind` on the tape that owns `inputs`.
autodiff::Var apply_function(FunctionKind kind, std::span<const autodiff::Var> inputs);

}  // namespace gmeql
