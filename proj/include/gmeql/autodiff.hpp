#pragma once

// Tape-based reverse-mode automatic differentiation over scalar graphs.
//
// Every primitive applied to a Var appends one record to the Tape that owns
// it. Records are stored in evaluation order, so a single reverse sweep over
// the tape accumulates adjoints for every parameter leaf.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

namespace gmeql::autodiff {

/// Thrown when a Var is used with a tape that did not create it, or when a
/// primitive receives the wrong number of operands.
class StructuralError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class Op : std::uint8_t {
  constant,
  parameter,
  add,
  sub,
  mul,
  div,
  sin,
  cos,
  sqrt,
  pow_int,
  sum_n,
  exp,
  log,
  abs,
  softmax_component,
};

inline constexpr double kDivisionGuard = 1e-6;
inline constexpr double kSqrtGuard = 1e-12;

/// sign(d) * max(|d|, kDivisionGuard), with sign(0) = +1.
double guard_denominator(double d);
/// max(a, kSqrtGuard).
double guard_sqrt_argument(double a);

using ParamId = std::size_t;

class Tape;

class Var {
 public:
  Var() = default;

  double value() const { return value_; }
  std::uint32_t index() const { return index_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint32_t index, double value)
      : tape_(tape), index_(index), value_(value) {}

  Tape* tape_ = nullptr;
  std::uint32_t index_ = 0;
  double value_ = 0.0;
};

/// Partial derivatives keyed by parameter id. Every parameter leaf recorded on
/// the tape has an entry, zero when the output does not depend on it.
class GradientVector {
 public:
  double operator[](ParamId id) const;
  bool contains(ParamId id) const { return entries_.count(id) != 0; }
  std::size_t size() const { return entries_.size(); }
  const std::map<ParamId, double>& entries() const { return entries_; }
  void accumulate(ParamId id, double value) { entries_[id] += value; }

 private:
  std::map<ParamId, double> entries_;
};

class Tape {
 public:
  Var constant(double value);
  Var parameter(ParamId id, double value);

  /// Appends one primitive. `aux` carries the integer exponent for pow_int
  /// and the selected component for softmax_component.
  Var record(Op op, std::span<const Var> operands, int aux = 0);

  /// Reverse accumulation from `output` in one sweep.
  GradientVector backward(Var output) const;

  /// Re-evaluates every record in order from the current leaf values.
  std::vector<double> replay() const;
  /// Changes the value of every leaf registered under `id`; takes effect on
  /// the next replay().
  void set_parameter(ParamId id, double value);

  double value(Var v) const;
  std::size_t size() const { return records_.size(); }
  void clear();
  void reserve(std::size_t records);

 private:
  struct Record {
    Op op;
    int aux;
    std::uint32_t first;
    std::uint32_t count;
    ParamId param;
  };

  void check_owned(Var v) const;
  double evaluate(const Record& r, std::span<const double> values) const;

  std::vector<Record> records_;
  std::vector<std::uint32_t> operands_;
  std::vector<double> values_;
};

// Convenience builders. All operands must come from the same tape.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var sin(Var a);
Var cos(Var a);
Var sqrt(Var a);
Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var pow_int(Var a, int exponent);
Var sum(std::span<const Var> terms);
Var softmax_component(std::span<const Var> logits, std::size_t component);

/// Central-difference gradient of `f` at `params`.
std::vector<double> finite_difference_oracle(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> params, double h);

}  // namespace gmeql::autodiff
