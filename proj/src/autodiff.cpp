#include "gmeql/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gmeql::autodiff {

double guard_denominator(double d) {
  const double magnitude = std::max(std::abs(d), kDivisionGuard);
  return d < 0.0 ? -magnitude : magnitude;
}

double guard_sqrt_argument(double a) { return std::max(a, kSqrtGuard); }

double GradientVector::operator[](ParamId id) const {
  const auto it = entries_.find(id);
  return it == entries_.end() ? 0.0 : it->second;
}

namespace {

int expected_arity(Op op) {
  switch (op) {
    case Op::constant:
    case Op::parameter:
      return 0;
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::div:
      return 2;
    case Op::sin:
    case Op::cos:
    case Op::sqrt:
    case Op::pow_int:
    case Op::exp:
    case Op::log:
    case Op::abs:
      return 1;
    case Op::sum_n:
    case Op::softmax_component:
      return -1;
  }
  return -1;
}

double ipow(double x, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= x;
  return r;
}

}  // namespace

void Tape::check_owned(Var v) const {
  if (v.tape() != this) {
    throw StructuralError("autodiff: Var does not belong to this tape");
  }
  if (v.index() >= records_.size()) {
    throw StructuralError("autodiff: Var index out of range");
  }
}

Var Tape::constant(double value) {
  const auto index = static_cast<std::uint32_t>(records_.size());
  records_.push_back({Op::constant, 0, 0, 0, 0});
  values_.push_back(value);
  return {this, index, value};
}

Var Tape::parameter(ParamId id, double value) {
  const auto index = static_cast<std::uint32_t>(records_.size());
  records_.push_back({Op::parameter, 0, 0, 0, id});
  values_.push_back(value);
  return {this, index, value};
}

Var Tape::record(Op op, std::span<const Var> operands, int aux) {
  const int arity = expected_arity(op);
  if (op == Op::constant || op == Op::parameter) {
    throw StructuralError("autodiff: leaves are created with constant()/parameter()");
  }
  if (arity >= 0 && static_cast<int>(operands.size()) != arity) {
    throw StructuralError("autodiff: wrong operand count");
  }
  if (operands.empty()) {
    throw StructuralError("autodiff: primitive needs at least one operand");
  }
  if (op == Op::pow_int && (aux < 2 || aux > 6)) {
    throw StructuralError("autodiff: pow_int exponent must be in 2..6");
  }
  if (op == Op::softmax_component &&
      (aux < 0 || static_cast<std::size_t>(aux) >= operands.size())) {
    throw StructuralError("autodiff: softmax component out of range");
  }
  for (const Var& v : operands) check_owned(v);

  Record r{op, aux, static_cast<std::uint32_t>(operands_.size()),
           static_cast<std::uint32_t>(operands.size()), 0};
  for (const Var& v : operands) operands_.push_back(v.index());
  const double value = evaluate(r, values_);
  const auto index = static_cast<std::uint32_t>(records_.size());
  records_.push_back(r);
  values_.push_back(value);
  return {this, index, value};
}

double Tape::evaluate(const Record& r, std::span<const double> values) const {
  const auto arg = [&](std::uint32_t k) { return values[operands_[r.first + k]]; };
  switch (r.op) {
    case Op::constant:
    case Op::parameter:
      return 0.0;  // leaves are never re-evaluated
    case Op::add:
      return arg(0) + arg(1);
    case Op::sub:
      return arg(0) - arg(1);
    case Op::mul:
      return arg(0) * arg(1);
    case Op::div:
      return arg(0) / guard_denominator(arg(1));
    case Op::sin:
      return std::sin(arg(0));
    case Op::cos:
      return std::cos(arg(0));
    case Op::sqrt:
      return std::sqrt(guard_sqrt_argument(arg(0)));
    case Op::pow_int:
      return ipow(arg(0), r.aux);
    case Op::sum_n: {
      double s = 0.0;
      for (std::uint32_t k = 0; k < r.count; ++k) s += arg(k);
      return s;
    }
    case Op::exp:
      return std::exp(arg(0));
    case Op::log:
      return std::log(arg(0));
    case Op::abs:
      return std::abs(arg(0));
    case Op::softmax_component: {
      double hi = -std::numeric_limits<double>::infinity();
      for (std::uint32_t k = 0; k < r.count; ++k) hi = std::max(hi, arg(k));
      double denom = 0.0;
      for (std::uint32_t k = 0; k < r.count; ++k) denom += std::exp(arg(k) - hi);
      return std::exp(arg(static_cast<std::uint32_t>(r.aux)) - hi) / denom;
    }
  }
  return 0.0;
}

GradientVector Tape::backward(Var output) const {
  check_owned(output);
  std::vector<double> adj(records_.size(), 0.0);
  adj[output.index()] = 1.0;

  GradientVector grad;
  for (const Record& r : records_) {
    if (r.op == Op::parameter) grad.accumulate(r.param, 0.0);
  }

  for (std::size_t i = output.index() + 1; i-- > 0;) {
    const Record& r = records_[i];
    const double g = adj[i];
    if (r.op == Op::parameter) {
      grad.accumulate(r.param, g);
      continue;
    }
    if (g == 0.0 || r.op == Op::constant) continue;

    const auto idx = [&](std::uint32_t k) { return operands_[r.first + k]; };
    const auto val = [&](std::uint32_t k) { return values_[idx(k)]; };
    switch (r.op) {
      case Op::add:
        adj[idx(0)] += g;
        adj[idx(1)] += g;
        break;
      case Op::sub:
        adj[idx(0)] += g;
        adj[idx(1)] -= g;
        break;
      case Op::mul:
        adj[idx(0)] += g * val(1);
        adj[idx(1)] += g * val(0);
        break;
      case Op::div: {
        const double d = val(1);
        const double gd = guard_denominator(d);
        adj[idx(0)] += g / gd;
        if (std::abs(d) > kDivisionGuard) adj[idx(1)] -= g * val(0) / (gd * gd);
        break;
      }
      case Op::sin:
        adj[idx(0)] += g * std::cos(val(0));
        break;
      case Op::cos:
        adj[idx(0)] -= g * std::sin(val(0));
        break;
      case Op::sqrt:
        if (val(0) > kSqrtGuard) adj[idx(0)] += g * 0.5 / values_[i];
        break;
      case Op::pow_int:
        adj[idx(0)] += g * r.aux * ipow(val(0), r.aux - 1);
        break;
      case Op::sum_n:
        for (std::uint32_t k = 0; k < r.count; ++k) adj[idx(k)] += g;
        break;
      case Op::exp:
        adj[idx(0)] += g * values_[i];
        break;
      case Op::log:
        adj[idx(0)] += g / val(0);
        break;
      case Op::abs:
        adj[idx(0)] += val(0) > 0.0 ? g : (val(0) < 0.0 ? -g : 0.0);
        break;
      case Op::softmax_component: {
        // d s_c / d a_k = s_c (delta_ck - s_k)
        double hi = -std::numeric_limits<double>::infinity();
        for (std::uint32_t k = 0; k < r.count; ++k) hi = std::max(hi, val(k));
        double denom = 0.0;
        for (std::uint32_t k = 0; k < r.count; ++k) denom += std::exp(val(k) - hi);
        const double sc = values_[i];
        for (std::uint32_t k = 0; k < r.count; ++k) {
          const double sk = std::exp(val(k) - hi) / denom;
          const double delta = k == static_cast<std::uint32_t>(r.aux) ? 1.0 : 0.0;
          adj[idx(k)] += g * sc * (delta - sk);
        }
        break;
      }
      case Op::constant:
      case Op::parameter:
        break;
    }
  }
  return grad;
}

std::vector<double> Tape::replay() const {
  std::vector<double> values(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const Record& r = records_[i];
    if (r.op == Op::constant || r.op == Op::parameter) {
      values[i] = values_[i];
    } else {
      values[i] = evaluate(r, values);
    }
  }
  return values;
}

void Tape::set_parameter(ParamId id, double value) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (records_[i].op == Op::parameter && records_[i].param == id) values_[i] = value;
  }
}

double Tape::value(Var v) const {
  check_owned(v);
  return values_[v.index()];
}

void Tape::clear() {
  records_.clear();
  operands_.clear();
  values_.clear();
}

void Tape::reserve(std::size_t records) {
  records_.reserve(records);
  values_.reserve(records);
  operands_.reserve(records * 2);
}

namespace {

Tape& owner(Var v) {
  if (!v.valid()) throw StructuralError("autodiff: Var is not attached to a tape");
  return *v.tape();
}

Var binary(Op op, Var a, Var b) {
  const Var operands[] = {a, b};
  return owner(a).record(op, operands);
}

Var unary(Op op, Var a, int aux = 0) {
  const Var operands[] = {a};
  return owner(a).record(op, operands, aux);
}

}  // namespace

Var operator+(Var a, Var b) { return binary(Op::add, a, b); }
Var operator-(Var a, Var b) { return binary(Op::sub, a, b); }
Var operator*(Var a, Var b) { return binary(Op::mul, a, b); }
Var operator/(Var a, Var b) { return binary(Op::div, a, b); }
Var sin(Var a) { return unary(Op::sin, a); }
Var cos(Var a) { return unary(Op::cos, a); }
Var sqrt(Var a) { return unary(Op::sqrt, a); }
Var exp(Var a) { return unary(Op::exp, a); }
Var log(Var a) { return unary(Op::log, a); }
Var abs(Var a) { return unary(Op::abs, a); }
Var pow_int(Var a, int exponent) { return unary(Op::pow_int, a, exponent); }

Var sum(std::span<const Var> terms) {
  if (terms.empty()) throw StructuralError("autodiff: sum of no terms");
  return owner(terms.front()).record(Op::sum_n, terms);
}

Var softmax_component(std::span<const Var> logits, std::size_t component) {
  if (logits.empty()) throw StructuralError("autodiff: softmax of no logits");
  return owner(logits.front())
      .record(Op::softmax_component, logits, static_cast<int>(component));
}

std::vector<double> finite_difference_oracle(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> params, double h) {
  std::vector<double> point(params.begin(), params.end());
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + h;
    const double up = f(point);
    point[i] = saved - h;
    const double down = f(point);
    point[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace gmeql::autodiff
