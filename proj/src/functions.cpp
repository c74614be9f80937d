#include "gmeql/functions.hpp"

#include <cmath>
#include <stdexcept>

namespace gmeql {

std::string_view function_name(FunctionKind kind) {
  switch (kind) {
    case FunctionKind::add: return "add";
    case FunctionKind::sub: return "sub";
    case FunctionKind::mul: return "mul";
    case FunctionKind::div: return "div";
    case FunctionKind::sin: return "sin";
    case FunctionKind::cos: return "cos";
    case FunctionKind::sqrt: return "sqrt";
    case FunctionKind::pow2: return "pow2";
    case FunctionKind::pow3: return "pow3";
    case FunctionKind::pow4: return "pow4";
    case FunctionKind::pow5: return "pow5";
    case FunctionKind::pow6: return "pow6";
    case FunctionKind::sum_n: return "sum";
  }
  return "?";
}

std::optional<FunctionKind> parse_function_kind(std::string_view name) {
  for (FunctionKind kind : kAllFunctionKinds) {
    if (function_name(kind) == name) return kind;
  }
  if (name == "sum_n") return FunctionKind::sum_n;
  return std::nullopt;
}

bool is_unary(FunctionKind kind) {
  switch (kind) {
    case FunctionKind::sin:
    case FunctionKind::cos:
    case FunctionKind::sqrt:
    case FunctionKind::pow2:
    case FunctionKind::pow3:
    case FunctionKind::pow4:
    case FunctionKind::pow5:
    case FunctionKind::pow6:
      return true;
    default:
      return false;
  }
}

bool is_commutative(FunctionKind kind) {
  return kind == FunctionKind::add || kind == FunctionKind::mul ||
         kind == FunctionKind::sum_n;
}

int power_of(FunctionKind kind) {
  switch (kind) {
    case FunctionKind::pow2: return 2;
    case FunctionKind::pow3: return 3;
    case FunctionKind::pow4: return 4;
    case FunctionKind::pow5: return 5;
    case FunctionKind::pow6: return 6;
    default: return 0;
  }
}

int arity(FunctionKind kind, int sum_arity) {
  if (kind == FunctionKind::sum_n) return sum_arity;
  return is_unary(kind) ? 1 : 2;
}

double apply_function(FunctionKind kind, std::span<const double> in) {
  switch (kind) {
    case FunctionKind::add: return in[0] + in[1];
    case FunctionKind::sub: return in[0] - in[1];
    case FunctionKind::mul: return in[0] * in[1];
    case FunctionKind::div: return in[0] / autodiff::guard_denominator(in[1]);
    case FunctionKind::sin: return std::sin(in[0]);
    case FunctionKind::cos: return std::cos(in[0]);
    case FunctionKind::sqrt: return std::sqrt(autodiff::guard_sqrt_argument(in[0]));
    case FunctionKind::sum_n: {
      double s = 0.0;
      for (double v : in) s += v;
      return s;
    }
    default: {
      double r = 1.0;
      for (int i = power_of(kind); i > 0; --i) r *= in[0];
      return r;
    }
  }
}

autodiff::Var apply_function(FunctionKind kind, std::span<const autodiff::Var> in) {
  using autodiff::Op;
  if (in.empty()) throw autodiff::StructuralError("apply_function: no inputs");
  autodiff::Tape& tape = *in.front().tape();
  switch (kind) {
    case FunctionKind::add: return tape.record(Op::add, in);
    case FunctionKind::sub: return tape.record(Op::sub, in);
    case FunctionKind::mul: return tape.record(Op::mul, in);
    case FunctionKind::div: return tape.record(Op::div, in);
    case FunctionKind::sin: return tape.record(Op::sin, in);
    case FunctionKind::cos: return tape.record(Op::cos, in);
    case FunctionKind::sqrt: return tape.record(Op::sqrt, in);
    case FunctionKind::sum_n: return tape.record(Op::sum_n, in);
    default: return tape.record(Op::pow_int, in, power_of(kind));
  }
}

}  // namespace gmeql
