#include "gmeql/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "gmeql/autodiff.hpp"
#include "gmeql/batch_evaluator.hpp"
#include "gmeql/repository.hpp"

namespace gmeql {

namespace {

constexpr double kTemperature = 2.0 / 3.0;
constexpr double kGradientFloor = 1e-3;

Dataset random_dataset(int dims, int rows, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.5, 2.0);
  Dataset d;
  d.dims = dims;
  for (int r = 0; r < rows; ++r) {
    for (int k = 0; k < dims; ++k) d.inputs.push_back(uniform(rng));
    d.targets.push_back(uniform(rng));
  }
  return d;
}

// Gradient of the MAE with respect to (z, w), holding the Gumbel draws of
// labeled connections fixed, on the reference tape.
std::vector<double> tape_gradient(const Network& net, const Parameters& params,
                                  const NetworkInstance& inst, const Dataset& data) {
  autodiff::Tape tape;
  const TapeBinding binding = bind(tape, net, params, inst, kTemperature);
  const autodiff::Var loss = mae_on_tape(net, binding, data, tape);
  const auto grads = tape.backward(loss);
  std::vector<double> out;
  for (std::size_t i = 0; i < net.z_size(); ++i) out.push_back(grads[net.z_param(i)]);
  for (std::size_t c = 0; c < net.connection_count(); ++c) out.push_back(grads[net.w_param(c)]);
  return out;
}

std::vector<double> batch_gradient(const Network& net, const Parameters& params,
                                   const NetworkInstance& inst, const Dataset& data) {
  BatchEvaluator eval(net, data);
  std::vector<double> dv(net.z_size(), 0.0), dz(net.z_size(), 0.0);
  std::vector<double> dw(net.connection_count(), 0.0);
  eval.mae_and_gradient(inst.v, params.w, 1.0, inst.labels, dv, dw);
  const gumbel::Temperature lambda(kTemperature);
  for (std::size_t c = 0; c < net.connection_count(); ++c) {
    if (!inst.labels[c]) continue;
    const Connection& conn = net.connection(c);
    const auto n = static_cast<std::size_t>(conn.fan_in);
    gumbel::softmax_backward({inst.v.data() + conn.z_offset, n}, {dv.data() + conn.z_offset, n},
                             lambda, {dz.data() + conn.z_offset, n});
  }
  dz.insert(dz.end(), dw.begin(), dw.end());
  return dz;
}

double loss_at(const Network& net, const NetworkInstance& base, const Dataset& data,
               std::span<const double> theta) {
  Parameters p;
  p.z.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(net.z_size()));
  p.w.assign(theta.begin() + static_cast<std::ptrdiff_t>(net.z_size()), theta.end());
  NetworkInstance inst = base;
  const gumbel::Temperature lambda(kTemperature);
  for (std::size_t c = 0; c < net.connection_count(); ++c) {
    if (!inst.labels[c]) continue;
    const Connection& conn = net.connection(c);
    const auto n = static_cast<std::size_t>(conn.fan_in);
    gumbel::relax({p.z.data() + conn.z_offset, n}, {inst.gumbel.data() + conn.z_offset, n},
                  lambda, {inst.v.data() + conn.z_offset, n});
  }
  return mae(net, p, inst, data);
}

}  // namespace

NetworkSpec random_network_spec(Rng& rng) {
  std::uniform_int_distribution<int> inputs(1, 3), layers(1, 2), width(1, 4);
  std::uniform_int_distribution<std::size_t> kind(0, std::size(kAllFunctionKinds) - 1);
  NetworkSpec spec;
  spec.input_count = inputs(rng);
  spec.constant_node = true;
  spec.sum_arity = 3;
  const int hidden = layers(rng);
  for (int k = 0; k < hidden; ++k) {
    std::vector<FunctionKind> layer;
    const int n = width(rng);
    for (int i = 0; i < n; ++i) layer.push_back(kAllFunctionKinds[kind(rng)]);
    spec.hidden_layers.push_back(std::move(layer));
  }
  return spec;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

CheckResult check_network_gradients(int networks, std::uint64_t seed) {
  CheckResult result{"a", "network gradient vs finite differences", 0.0, 1e-5, false};
  Rng rng(seed);
  const gumbel::Temperature lambda(kTemperature);
  int done = 0;
  int attempts = 0;
  while (done < networks && attempts < networks * 20) {
    ++attempts;
    const Network net(random_network_spec(rng));
    const Dataset data = random_dataset(net.spec().input_count, 12, rng);
    Parameters params = init_parameters(net, rng);
    for (double& w : params.w) w = 0.5 * w;
    NetworkInstance inst = fresh_instance(net, params, lambda, rng);
    std::bernoulli_distribution keep(0.7);
    for (auto& label : inst.labels) label = keep(rng) ? 1 : 0;

    std::vector<double> theta = params.z;
    theta.insert(theta.end(), params.w.begin(), params.w.end());
    const double base = loss_at(net, inst, data, theta);
    if (!std::isfinite(base) || base > 1e6) continue;

    const auto tape = tape_gradient(net, params, inst, data);
    const auto batch = batch_gradient(net, params, inst, data);
    const auto fd = autodiff::finite_difference_oracle(
        [&](std::span<const double> t) { return loss_at(net, inst, data, t); }, theta, 1e-6);
    // Central differences carry ~1e-10 absolute round-off, so nearly flat
    // losses are compared against a gradient-norm floor of 1e-3.
    const double err = std::max(relative_error(tape, fd, kGradientFloor),
                                relative_error(batch, tape, kGradientFloor));
    result.value = std::max(result.value, err);
    ++done;
  }
  result.passed = done == networks && result.value < result.threshold;
  return result;
}

CheckResult check_gumbel_frequencies(int draws, std::uint64_t seed) {
  CheckResult result{"b", "Gumbel argmax frequencies vs softmax(z)", 0.0, 0.01, false};
  Rng rng(seed);
  const std::vector<double> z{std::log(1.0), std::log(2.0), std::log(3.0)};
  const gumbel::Temperature lambda(kTemperature);
  std::vector<double> counts(z.size(), 0.0);
  std::vector<double> v(z.size()), g(z.size());
  for (int i = 0; i < draws; ++i) {
    gumbel::sample_involvement(z, lambda, rng, v, g);
    counts[static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin())] += 1.0;
  }
  const auto expected = gumbel::selection_probability(z);
  for (std::size_t k = 0; k < z.size(); ++k) {
    result.value = std::max(result.value, std::abs(counts[k] / draws - expected[k]));
  }
  result.passed = result.value < result.threshold;
  return result;
}

CheckResult check_score_gradient(const DiagnosticHooks& hooks, std::uint64_t seed) {
  CheckResult result{"c", "score gradient vs finite differences of log density", 0.0, 1e-6,
                     false};
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> size(2, 6);
  const gumbel::Temperature lambda(kTemperature);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(static_cast<std::size_t>(size(rng)));
    for (double& x : z) x = normal(rng);
    const auto v = gumbel::sample_involvement(z, lambda, rng);
    if (*std::min_element(v.begin(), v.end()) < 1e-8) continue;
    const auto analytic = hooks.score_gradient(z, v, lambda);
    const auto fd = autodiff::finite_difference_oracle(
        [&](std::span<const double> zz) { return gumbel::log_density(zz, v, lambda); }, z, 1e-5);
    result.value = std::max(result.value, relative_error(analytic, fd));
  }
  result.passed = result.value < result.threshold;
  return result;
}

CheckResult check_fixed_point(const DiagnosticHooks& hooks, std::uint64_t seed) {
  CheckResult result{"d", "score gradient residual at exp(z) = v^lambda", 0.0, 1e-10, false};
  Rng rng(seed);
  std::uniform_real_distribution<double> uniform(0.05, 1.0);
  std::uniform_int_distribution<int> size(2, 6);
  const gumbel::Temperature lambda(kTemperature);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(size(rng)));
    double total = 0.0;
    for (double& x : v) total += (x = uniform(rng));
    for (double& x : v) x /= total;
    std::vector<double> z(v.size());
    for (std::size_t a = 0; a < v.size(); ++a) z[a] = lambda.value() * std::log(v[a]);
    for (double g : hooks.score_gradient(z, v, lambda)) {
      result.value = std::max(result.value, std::abs(g));
    }
  }
  result.passed = result.value < result.threshold;
  return result;
}

CheckResult check_density_normalization(std::uint64_t seed) {
  CheckResult result{"e", "two-way density integrates to one", 0.0, 1e-3, false};
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  boost::math::quadrature::tanh_sinh<double> integrator;
  for (double lambda_value : {2.0 / 3.0, 0.5, 1.0, 2.0}) {
    const gumbel::Temperature lambda(lambda_value);
    for (int trial = 0; trial < 5; ++trial) {
      const std::vector<double> z{normal(rng), normal(rng)};
      auto density = [&](double t) {
        if (t <= 0.0 || t >= 1.0) return 0.0;
        const std::vector<double> v{t, 1.0 - t};
        return std::exp(gumbel::log_density(z, v, lambda));
      };
      const double total = integrator.integrate(density, 0.0, 1.0);
      result.value = std::max(result.value, std::abs(total - 1.0));
    }
  }
  result.passed = result.value < result.threshold;
  return result;
}

std::vector<CheckResult> run_diagnostics(const DiagnosticHooks& hooks, std::uint64_t seed) {
  return {
      check_network_gradients(50, seed),
      check_gumbel_frequencies(100000, seed + 1),
      check_score_gradient(hooks, seed + 2),
      check_fixed_point(hooks, seed + 3),
      check_density_normalization(seed + 4),
  };
}

}  // namespace gmeql
