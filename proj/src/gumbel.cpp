#include "gmeql/gumbel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gmeql::gumbel {

Temperature::Temperature(double value) : value_(value) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw DomainError("temperature must be a positive finite number");
  }
}

double sample_gumbel(Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = std::clamp(uniform(rng), kUniformClamp, 1.0 - kUniformClamp);
  return -std::log(-std::log(u));
}

void relax(std::span<const double> z, std::span<const double> g, Temperature lambda,
           std::span<double> v) {
  const double inv = 1.0 / lambda.value();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < z.size(); ++l) {
    v[l] = (z[l] + g[l]) * inv;
    hi = std::max(hi, v[l]);
  }
  double total = 0.0;
  for (std::size_t l = 0; l < z.size(); ++l) {
    v[l] = std::exp(v[l] - hi);
    total += v[l];
  }
  for (std::size_t l = 0; l < z.size(); ++l) v[l] /= total;
}

void sample_involvement(std::span<const double> z, Temperature lambda, Rng& rng,
                        std::span<double> v, std::span<double> g) {
  for (std::size_t l = 0; l < z.size(); ++l) g[l] = sample_gumbel(rng);
  relax(z, g, lambda, v);
}

std::vector<double> sample_involvement(std::span<const double> z, Temperature lambda,
                                       Rng& rng) {
  std::vector<double> v(z.size());
  std::vector<double> g(z.size());
  sample_involvement(z, lambda, rng, v, g);
  return v;
}

std::vector<double> selection_probability(std::span<const double> z) {
  std::vector<double> p(z.size());
  const std::vector<double> zero(z.size(), 0.0);
  relax(z, zero, Temperature(1.0), p);
  return p;
}

namespace {

void check_domain(std::span<const double> z, std::span<const double> v) {
  if (z.size() != v.size() || z.empty()) {
    throw DomainError("structure parameters and involvement vector differ in size");
  }
  for (double x : v) {
    if (!(x > 0.0)) throw DomainError("involvement components must be > 0");
  }
}

double floored_log(double x) { return std::log(std::max(x, kInvolvementFloor)); }

// Normalized weights exp(z_a) v_a^-lambda / sum_b exp(z_b) v_b^-lambda, plus
// the log of the normalizer.
double tilted_weights(std::span<const double> z, std::span<const double> v, double lambda,
                      std::vector<double>& weights) {
  weights.resize(z.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < z.size(); ++a) {
    weights[a] = z[a] - lambda * floored_log(v[a]);
    hi = std::max(hi, weights[a]);
  }
  double total = 0.0;
  for (double& w : weights) {
    w = std::exp(w - hi);
    total += w;
  }
  for (double& w : weights) w /= total;
  return hi + std::log(total);
}

}  // namespace

double log_density(std::span<const double> z, std::span<const double> v, Temperature lambda) {
  check_domain(z, v);
  const double lam = lambda.value();
  const auto m = static_cast<double>(z.size());
  std::vector<double> weights;
  const double log_norm = tilted_weights(z, v, lam, weights);
  double result = std::lgamma(m) + (m - 1.0) * std::log(lam);
  for (std::size_t a = 0; a < z.size(); ++a) {
    result += z[a] - (lam + 1.0) * floored_log(v[a]);
  }
  return result - m * log_norm;
}

std::vector<double> score_gradient(std::span<const double> z, std::span<const double> v,
                                   Temperature lambda) {
  check_domain(z, v);
  std::vector<double> weights;
  tilted_weights(z, v, lambda.value(), weights);
  const auto m = static_cast<double>(z.size());
  std::vector<double> grad(z.size());
  // (1 - pi_l) - (M - 1) pi_l
  for (std::size_t l = 0; l < z.size(); ++l) grad[l] = (1.0 - weights[l]) - (m - 1.0) * weights[l];
  return grad;
}

double jprime_loss(std::span<const double> z, std::span<const double> v, Temperature lambda) {
  check_domain(z, v);
  double total = 0.0;
  for (std::size_t a = 0; a < z.size(); ++a) {
    const double d = std::exp(z[a]) - std::pow(std::max(v[a], kInvolvementFloor), lambda.value());
    total += d * d;
  }
  return total;
}

std::vector<double> jprime_gradient(std::span<const double> z, std::span<const double> v,
                                    Temperature lambda) {
  check_domain(z, v);
  std::vector<double> grad(z.size());
  for (std::size_t a = 0; a < z.size(); ++a) {
    const double e = std::exp(z[a]);
    grad[a] = 2.0 * (e - std::pow(std::max(v[a], kInvolvementFloor), lambda.value())) * e;
  }
  return grad;
}

void softmax_backward(std::span<const double> v, std::span<const double> dv,
                      Temperature lambda, std::span<double> dz) {
  double inner = 0.0;
  for (std::size_t l = 0; l < v.size(); ++l) inner += v[l] * dv[l];
  const double inv = 1.0 / lambda.value();
  for (std::size_t l = 0; l < v.size(); ++l) dz[l] += inv * v[l] * (dv[l] - inner);
}

}  // namespace gmeql::gumbel
