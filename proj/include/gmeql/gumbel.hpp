#pragma once

// Gumbel-softmax relaxation of a categorical connection choice and the
// Concrete-distribution quantities used for offline training.
//
// For one connection with structure parameters z (length M) and temperature
// lambda, an involvement vector is v = softmax((z + g) / lambda) with i.i.d.
// standard Gumbel draws g. Its argmax is distributed as softmax(z) for every
// lambda, and v approaches a one-hot vector as lambda -> 0.

#include <span>
#include <stdexcept>
#include <vector>

#include "gmeql/random.hpp"

namespace gmeql::gumbel {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kUniformClamp = 1e-12;
inline constexpr double kInvolvementFloor = 1e-12;

/// Concrete-distribution temperature, strictly positive.
class Temperature {
 public:
  explicit Temperature(double value);
  double value() const { return value_; }

 private:
  double value_;
};

/// -log(-log(u)) with u uniform on (0, 1), clamped to [1e-12, 1 - 1e-12].
double sample_gumbel(Rng& rng);

/// Writes fresh Gumbel draws to `g` and softmax((z + g) / lambda) to `v`.
void sample_involvement(std::span<const double> z, Temperature lambda, Rng& rng,
                        std::span<double> v, std::span<double> g);
std::vector<double> sample_involvement(std::span<const double> z, Temperature lambda,
                                       Rng& rng);

/// softmax((z + g) / lambda) for given draws.
void relax(std::span<const double> z, std::span<const double> g, Temperature lambda,
           std::span<double> v);

/// Probability that each component wins the argmax: softmax(z).
std::vector<double> selection_probability(std::span<const double> z);

/// Log of the Concrete density of v with alpha = exp(z), computed in log space.
/// Throws DomainError when a component of v is <= 0 or sizes differ.
double log_density(std::span<const double> z, std::span<const double> v, Temperature lambda);

/// Closed-form gradient of log_density with respect to z.
std::vector<double> score_gradient(std::span<const double> z, std::span<const double> v,
                                   Temperature lambda);

/// sum_a (exp(z_a) - v_a^lambda)^2 for one connection.
double jprime_loss(std::span<const double> z, std::span<const double> v, Temperature lambda);
/// Gradient of jprime_loss with respect to z.
std::vector<double> jprime_gradient(std::span<const double> z, std::span<const double> v,
                                    Temperature lambda);

/// Chains dL/dv to dL/dz through v = softmax((z + g) / lambda) and adds the
/// result to `dz`.
void softmax_backward(std::span<const double> v, std::span<const double> dv,
                      Temperature lambda, std::span<double> dz);

}  // namespace gmeql::gumbel
