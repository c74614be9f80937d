#include "gmeql/expression.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

namespace gmeql {

ParseError::ParseError(const std::string& message, std::size_t position)
    : std::runtime_error(message + " at position " + std::to_string(position)),
      position_(position) {}

Expr Expr::make_variable(int index) {
  Expr e;
  e.kind = Kind::variable;
  e.variable = index;
  return e;
}

Expr Expr::make_constant(double value) {
  Expr e;
  e.kind = Kind::constant;
  e.value = value;
  return e;
}

Expr Expr::make_apply(FunctionKind function, std::vector<Expr> children) {
  Expr e;
  e.kind = Kind::apply;
  e.function = function;
  e.weights.assign(children.size(), 1.0);
  e.weight_ids.assign(children.size(), -1);
  e.children = std::move(children);
  return e;
}

// ---------------------------------------------------------------------------
// Extraction

namespace {

Expr build_node(const Network& net, std::span<const double> w, std::span<const int> choices,
                int layer, int position) {
  if (layer == 0) {
    if (position < net.spec().input_count) return Expr::make_variable(position);
    return Expr::make_constant(1.0);
  }
  const NodeId node{layer, position};
  const std::size_t first = net.first_connection(node);
  Expr e;
  e.kind = Expr::Kind::apply;
  e.function = net.kind(node);
  for (int j = 0; j < net.node_arity(node); ++j) {
    const std::size_t c = first + static_cast<std::size_t>(j);
    e.children.push_back(build_node(net, w, choices, layer - 1, choices[c]));
    e.weights.push_back(w[c]);
    e.weight_ids.push_back(static_cast<int>(c));
  }
  return e;
}

}  // namespace

ExprTree extract(const Network& net, std::span<const double> w, std::span<const int> choices) {
  const std::size_t out = net.output_connection();
  ExprTree tree;
  tree.root = build_node(net, w, choices, net.output_layer() - 1, choices[out]);
  tree.gain = w[out];
  tree.gain_id = static_cast<int>(out);
  return tree;
}

ExprTree extract(const Network& net, std::span<const double> w, const NetworkInstance& instance) {
  const std::vector<int> choices = harden(net, instance);
  return extract(net, w, choices);
}

// ---------------------------------------------------------------------------
// Keys and evaluation

namespace {

std::string format_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string key_of(const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::variable:
      return "x" + std::to_string(e.variable + 1);
    case Expr::Kind::constant:
      return format_exact(e.value);
    case Expr::Kind::apply:
      break;
  }
  std::vector<std::string> parts;
  parts.reserve(e.children.size());
  for (const Expr& child : e.children) parts.push_back(key_of(child));
  if (is_commutative(e.function)) std::sort(parts.begin(), parts.end());
  std::string key(function_name(e.function));
  key += '(';
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) key += ',';
    key += parts[i];
  }
  key += ')';
  return key;
}

double eval_node(const Expr& e, std::span<const double> x) {
  switch (e.kind) {
    case Expr::Kind::variable:
      return x[static_cast<std::size_t>(e.variable)];
    case Expr::Kind::constant:
      return e.value;
    case Expr::Kind::apply:
      break;
  }
  double small[8];
  std::vector<double> large;
  double* in = small;
  if (e.children.size() > 8) {
    large.resize(e.children.size());
    in = large.data();
  }
  for (std::size_t j = 0; j < e.children.size(); ++j) {
    in[j] = e.weights[j] * eval_node(e.children[j], x);
  }
  return apply_function(e.function, {in, e.children.size()});
}

}  // namespace

std::string canonical_key(const ExprTree& tree) { return key_of(tree.root); }

double evaluate(const ExprTree& tree, std::span<const double> x) {
  return tree.gain * eval_node(tree.root, x);
}

// ---------------------------------------------------------------------------
// Printing

namespace {

constexpr int kPrecSum = 1;
constexpr int kPrecProduct = 2;
constexpr int kPrecPower = 3;
constexpr int kPrecAtom = 4;

struct Printed {
  std::string text;
  int prec;
  bool is_division = false;
};

std::string format_rounded(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string paren(const Printed& p, bool wrap) { return wrap ? "(" + p.text + ")" : p.text; }

Printed print_node(const Expr& e, int digits);

Printed weighted(const Expr& child, double weight, int digits) {
  Printed p = print_node(child, digits);
  if (weight == 1.0) return p;
  const bool wrap = p.prec < kPrecProduct || p.is_division || p.text.front() == '-';
  return {format_rounded(weight, digits) + "*" + paren(p, wrap), kPrecProduct};
}

Printed print_node(const Expr& e, int digits) {
  switch (e.kind) {
    case Expr::Kind::variable:
      return {"x" + std::to_string(e.variable + 1), kPrecAtom};
    case Expr::Kind::constant:
      return {format_rounded(e.value, digits), e.value < 0 ? kPrecProduct : kPrecAtom};
    case Expr::Kind::apply:
      break;
  }
  std::vector<Printed> args;
  for (std::size_t j = 0; j < e.children.size(); ++j) {
    args.push_back(weighted(e.children[j], e.weights[j], digits));
  }
  switch (e.function) {
    case FunctionKind::add:
    case FunctionKind::sum_n: {
      std::string s = args[0].text;
      for (std::size_t j = 1; j < args.size(); ++j) {
        // "a + -b" reads better as "a - b"; only safe when -b binds tighter.
        if (args[j].prec >= kPrecProduct && args[j].text.front() == '-') {
          s += " - " + args[j].text.substr(1);
        } else {
          s += " + " + paren(args[j], args[j].prec <= kPrecSum);
        }
      }
      return {s, kPrecSum};
    }
    case FunctionKind::sub:
      return {args[0].text + " - " + paren(args[1], args[1].prec <= kPrecSum), kPrecSum};
    case FunctionKind::mul:
      return {paren(args[0], args[0].prec < kPrecProduct) + " * " +
                  paren(args[1], args[1].prec <= kPrecProduct),
              kPrecProduct};
    case FunctionKind::div:
      return {paren(args[0], args[0].prec < kPrecProduct) + " / " +
                  paren(args[1], args[1].prec <= kPrecProduct),
              kPrecProduct, true};
    case FunctionKind::sin:
    case FunctionKind::cos:
    case FunctionKind::sqrt:
      return {std::string(function_name(e.function)) + "(" + args[0].text + ")", kPrecAtom};
    default:
      return {paren(args[0], args[0].prec < kPrecAtom) + "^" +
                  std::to_string(power_of(e.function)),
              kPrecPower};
  }
}

}  // namespace

std::string to_string(const ExprTree& tree, int significant_digits) {
  Printed p = print_node(tree.root, significant_digits);
  if (tree.gain == 1.0) return p.text;
  return format_rounded(tree.gain, significant_digits) + "*" +
         paren(p, p.prec < kPrecProduct || p.is_division);
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  ExprTree parse() {
    ExprTree tree;
    tree.root = expr();
    skip_space();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return tree;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, pos_); }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  static Expr binary(FunctionKind f, Expr a, Expr b) {
    std::vector<Expr> children;
    children.push_back(std::move(a));
    children.push_back(std::move(b));
    return Expr::make_apply(f, std::move(children));
  }

  Expr expr() {
    Expr lhs = term();
    for (;;) {
      if (accept('+')) {
        lhs = binary(FunctionKind::add, std::move(lhs), term());
      } else if (accept('-')) {
        lhs = binary(FunctionKind::sub, std::move(lhs), term());
      } else {
        return lhs;
      }
    }
  }

  Expr term() {
    Expr lhs = unary();
    for (;;) {
      if (accept('*')) {
        lhs = binary(FunctionKind::mul, std::move(lhs), unary());
      } else if (accept('/')) {
        lhs = binary(FunctionKind::div, std::move(lhs), unary());
      } else {
        return lhs;
      }
    }
  }

  Expr unary() {
    if (accept('-')) {
      Expr operand = unary();
      if (operand.kind == Expr::Kind::constant) {
        operand.value = -operand.value;
        return operand;
      }
      return binary(FunctionKind::mul, Expr::make_constant(-1.0), std::move(operand));
    }
    return power();
  }

  Expr power() {
    Expr base = primary();
    if (!accept('^')) return base;
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (start == pos_) fail("expected integer exponent");
    const int exponent = std::stoi(std::string(text_.substr(start, pos_ - start)));
    if (exponent == 1) return base;
    static constexpr FunctionKind kPowers[] = {FunctionKind::pow2, FunctionKind::pow3,
                                               FunctionKind::pow4, FunctionKind::pow5,
                                               FunctionKind::pow6};
    if (exponent < 2 || exponent > 6) {
      pos_ = start;
      fail("exponent must be between 1 and 6");
    }
    std::vector<Expr> children;
    children.push_back(std::move(base));
    return Expr::make_apply(kPowers[exponent - 2], std::move(children));
  }

  Expr primary() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Expr inner = expr();
      expect(')');
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c))) {
      const std::size_t start = pos_;
      while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      const std::string_view word = text_.substr(start, pos_ - start);
      if (word == "x") {
        const std::size_t digits = pos_;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
        if (digits == pos_) fail("expected variable index");
        const int index = std::stoi(std::string(text_.substr(digits, pos_ - digits)));
        if (index < 1) {
          pos_ = digits;
          fail("variable indices start at 1");
        }
        return Expr::make_variable(index - 1);
      }
      FunctionKind f;
      if (word == "sin") {
        f = FunctionKind::sin;
      } else if (word == "cos") {
        f = FunctionKind::cos;
      } else if (word == "sqrt") {
        f = FunctionKind::sqrt;
      } else {
        pos_ = start;
        fail("unknown identifier '" + std::string(word) + "'");
      }
      expect('(');
      std::vector<Expr> children;
      children.push_back(expr());
      expect(')');
      return Expr::make_apply(f, std::move(children));
    }
    fail(std::string("unexpected character '") + c + "'");
  }

  Expr number() {
    const std::size_t start = pos_;
    double value = 0.0;
    const char* first = text_.data() + pos_;
    const char* last = text_.data() + text_.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr == first) fail("malformed number");
    pos_ = start + static_cast<std::size_t>(ptr - first);
    return Expr::make_constant(value);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace

ExprTree parse_expression(std::string_view text) { return Parser(text).parse(); }

// ---------------------------------------------------------------------------
// Weights and comparison

namespace {

void assign_node(Expr& e, std::span<const double> w) {
  for (std::size_t j = 0; j < e.children.size(); ++j) {
    if (e.weight_ids[j] >= 0) e.weights[j] = w[static_cast<std::size_t>(e.weight_ids[j])];
    assign_node(e.children[j], w);
  }
}

void collect_ids(const Expr& e, std::vector<int>& ids) {
  for (std::size_t j = 0; j < e.children.size(); ++j) {
    if (e.weight_ids[j] >= 0) ids.push_back(e.weight_ids[j]);
    collect_ids(e.children[j], ids);
  }
}

int max_variable(const Expr& e) {
  int best = e.kind == Expr::Kind::variable ? e.variable : -1;
  for (const Expr& c : e.children) best = std::max(best, max_variable(c));
  return best;
}

}  // namespace

void assign_weights(ExprTree& tree, std::span<const double> w) {
  if (tree.gain_id >= 0) tree.gain = w[static_cast<std::size_t>(tree.gain_id)];
  assign_node(tree.root, w);
}

std::vector<int> weight_ids(const ExprTree& tree) {
  std::vector<int> ids;
  if (tree.gain_id >= 0) ids.push_back(tree.gain_id);
  collect_ids(tree.root, ids);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

int variable_count(const ExprTree& tree) { return max_variable(tree.root) + 1; }

double max_abs_deviation(const ExprTree& a, const ExprTree& b, const Domain& domain,
                         int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(domain.lo, domain.hi);
  std::vector<double> x(static_cast<std::size_t>(domain.dims));
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    for (double& xi : x) {
      do {
        xi = uniform(rng);
      } while (xi <= domain.lo);
    }
    const double d = std::abs(evaluate(a, x) - evaluate(b, x));
    if (!std::isfinite(d)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, d);
  }
  return worst;
}

bool matches_ground_truth(const ExprTree& tree, const ExprTree& ground_truth,
                          const Domain& domain, int samples) {
  if (variable_count(tree) > domain.dims || variable_count(ground_truth) > domain.dims) {
    return false;
  }
  return max_abs_deviation(tree, ground_truth, domain, samples) < kEquivalenceTolerance;
}

}  // namespace gmeql
