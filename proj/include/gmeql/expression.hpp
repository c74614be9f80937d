#pragma once

// Expression trees read out of a hardened network, or parsed from infix text.
//
// Infix grammar accepted by parse_expression():
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' INTEGER)?        exponent in 1..6
//   primary := NUMBER | 'x' INDEX | FUNC '(' expr ')' | '(' expr ')'
//   FUNC    := 'sin' | 'cos' | 'sqrt'
//
// Variables are 1-based in text (x1, x2, ...) and 0-based in the tree.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "gmeql/functions.hpp"
#include "gmeql/network.hpp"

namespace gmeql {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& message, std::size_t position);
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

struct Expr {
  enum class Kind { variable, constant, apply };

  Kind kind = Kind::constant;
  int variable = 0;
  double value = 0.0;
  FunctionKind function = FunctionKind::add;
  std::vector<Expr> children;
  std::vector<double> weights;    // one per child
  std::vector<int> weight_ids;    // network connection per child, -1 if none

  static Expr make_variable(int index);
  static Expr make_constant(double value);
  static Expr make_apply(FunctionKind function, std::vector<Expr> children);
};

/// An expression with an overall gain: the output connection's weight when
/// the tree comes from a network, 1 for parsed text.
struct ExprTree {
  Expr root;
  double gain = 1.0;
  int gain_id = -1;
};

/// Tree of the hardened instance, rooted at the node the output connection
/// selects. Shared upstream nodes are duplicated.
ExprTree extract(const Network& net, std::span<const double> w, std::span<const int> choices);
ExprTree extract(const Network& net, std::span<const double> w, const NetworkInstance& instance);

/// Weight-free structural key. Children of add, mul and sum are sorted.
std::string canonical_key(const ExprTree& tree);

/// Direct evaluation with the same division and sqrt guards as the network.
double evaluate(const ExprTree& tree, std::span<const double> x);

/// Infix form with coefficients rounded to `significant_digits`.
std::string to_string(const ExprTree& tree, int significant_digits = 4);

ExprTree parse_expression(std::string_view text);

/// Writes new values into every weight slot that carries a weight id.
void assign_weights(ExprTree& tree, std::span<const double> w);
/// Connection ids referenced by the tree, ascending and unique.
std::vector<int> weight_ids(const ExprTree& tree);

/// Largest variable index used plus one.
int variable_count(const ExprTree& tree);

struct Domain {
  int dims = 1;
  double lo = 0.0;
  double hi = 1.0;
};

/// Max |a(x) - b(x)| over `samples` inputs uniform in the domain.
double max_abs_deviation(const ExprTree& a, const ExprTree& b, const Domain& domain,
                         int samples = 10000, std::uint64_t seed = 0x5eed);

inline constexpr double kEquivalenceTolerance = 1e-3;

/// True when the two trees differ by less than kEquivalenceTolerance on every
/// one of `samples` points of the domain. Canonical keys ignore weights, so
/// they cannot decide this on their own.
bool matches_ground_truth(const ExprTree& tree, const ExprTree& ground_truth,
                          const Domain& domain, int samples = 10000);

}  // namespace gmeql
