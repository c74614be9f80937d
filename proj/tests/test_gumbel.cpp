#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gmeql/autodiff.hpp"
#include "gmeql/diagnostics.hpp"
#include "gmeql/gumbel.hpp"

using namespace gmeql;
using namespace gmeql::gumbel;

namespace {

const Temperature kLambda(2.0 / 3.0);

std::vector<double> win_frequencies(std::span<const double> z, Temperature lambda, int draws,
                                    std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> counts(z.size(), 0.0);
  for (int i = 0; i < draws; ++i) {
    const auto v = sample_involvement(z, lambda, rng);
    counts[static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin())] += 1.0;
  }
  for (double& c : counts) c /= draws;
  return counts;
}

double max_deviation(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> random_simplex(std::size_t m, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> v(m);
  for (double& x : v) x = u(rng);
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  for (double& x : v) x /= s;
  return v;
}

}  // namespace

TEST_CASE("temperature must be positive") {
  CHECK_THROWS(Temperature(0.0));
  CHECK_THROWS(Temperature(-1.0));
  CHECK(Temperature(0.5).value() == 0.5);
}

TEST_CASE("gumbel draws stay finite") {
  Rng rng(1);
  for (int i = 0; i < 100000; ++i) CHECK_FALSE(!std::isfinite(sample_gumbel(rng)));
}

TEST_CASE("sample_involvement") {
  Rng rng(2);
  const double one[] = {0.3};
  for (int i = 0; i < 10; ++i) CHECK(sample_involvement(one, kLambda, rng) == std::vector<double>{1.0});

  const double flat[] = {0.0, 0.0, 0.0};
  const auto f = win_frequencies(flat, kLambda, 100000, 3);
  for (double p : f) CHECK(std::abs(p - 1.0 / 3.0) < 0.01);

  const double biased[] = {std::log(2.0), 0.0};
  CHECK(std::abs(win_frequencies(biased, kLambda, 100000, 4)[0] - 2.0 / 3.0) < 0.01);
}

TEST_CASE("argmax frequencies follow softmax(z) at any temperature") {
  const double z[] = {std::log(1.0), std::log(2.0), std::log(3.0)};
  const auto p = selection_probability(z);
  for (double lambda : {2.0 / 3.0, 0.2, 1.5}) {
    CHECK(max_deviation(win_frequencies(z, Temperature(lambda), 100000, 5), p) < 0.01);
  }
}

TEST_CASE("low temperature gives near one-hot draws") {
  // max(v) > 0.99 needs the two largest z + g to differ by more than about
  // lambda * log(99 (M - 1)), so the fraction approaches 1 only as lambda -> 0.
  const double z[] = {0.3, -0.2, 1.0, 0.0};
  const auto sharp_fraction = [&](double lambda) {
    Rng rng(6);
    int sharp = 0;
    for (int i = 0; i < 10000; ++i) {
      const auto v = sample_involvement(z, Temperature(lambda), rng);
      if (*std::max_element(v.begin(), v.end()) > 0.99) ++sharp;
    }
    return sharp / 10000.0;
  };
  double previous = 0.0;
  for (double lambda : {2.0 / 3.0, 0.2, 0.05, 0.01, 0.002}) {
    const double f = sharp_fraction(lambda);
    INFO("lambda " << lambda << " fraction " << f);
    CHECK(f >= previous);
    previous = f;
  }
  CHECK(sharp_fraction(0.05) > 0.8);
  CHECK(sharp_fraction(0.002) >= 0.99);
}

TEST_CASE("selection_probability") {
  const double z0[] = {0.0, 0.0};
  CHECK(selection_probability(z0) == std::vector<double>{0.5, 0.5});
  const double z[] = {std::log(1.0), std::log(2.0), std::log(3.0)};
  const auto p = selection_probability(z);
  CHECK(p[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(p[2] == doctest::Approx(0.5).epsilon(1e-12));
  const double shifted[] = {z[0] + 40.0, z[1] + 40.0, z[2] + 40.0};
  CHECK(max_deviation(selection_probability(shifted), p) < 1e-15);
}

TEST_CASE("log_density") {
  const double z[] = {0.0, 0.0}, v[] = {0.5, 0.5};
  CHECK(log_density(z, v, kLambda) == doctest::Approx(std::log(2.0 / 3.0)).epsilon(1e-12));

  Rng rng(7);
  const auto r = random_simplex(4, rng);
  const double zz[] = {0.1, -0.4, 1.3, 0.2};
  const double zs[] = {5.1, 4.6, 6.3, 5.2};
  CHECK(log_density(zz, r, kLambda) == doctest::Approx(log_density(zs, r, kLambda)).epsilon(1e-12));

  const double bad[] = {1.0, 0.0};
  CHECK_THROWS_AS(log_density(z, bad, kLambda), DomainError);
  const double three[] = {0.2, 0.3, 0.5};
  CHECK_THROWS_AS(log_density(z, three, kLambda), DomainError);
}

TEST_CASE("density integrates to one for M = 2") {
  const CheckResult r = check_density_normalization(1);
  CHECK(r.passed);
  CHECK(r.value < 1e-3);
}

TEST_CASE("score gradient") {
  Rng rng(9);
  for (std::size_t m : {2u, 3u, 5u}) {
    // exp(z) = v^lambda is a stationary point.
    const auto v = random_simplex(m, rng);
    std::vector<double> z(m);
    for (std::size_t i = 0; i < m; ++i) z[i] = kLambda.value() * std::log(v[i]);
    for (double g : score_gradient(z, v, kLambda)) CHECK(std::abs(g) < 1e-10);
  }
  const double z1[] = {0.7}, v1[] = {1.0};
  CHECK(score_gradient(z1, v1, kLambda) == std::vector<double>{0.0});

  double worst = 0.0;
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t m = trial % 3 == 0 ? 2 : trial % 3 == 1 ? 3 : 5;
    const auto v = random_simplex(m, rng);
    std::vector<double> z(m);
    for (double& x : z) x = normal(rng);
    const auto g = score_gradient(z, v, kLambda);
    const auto fd = autodiff::finite_difference_oracle(
        [&](std::span<const double> p) { return log_density(p, v, kLambda); }, z, 1e-5);
    worst = std::max(worst, relative_error(g, fd, 1e-6));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("jprime") {
  const double z1[] = {0.0}, v1[] = {1.0};
  CHECK(jprime_loss(z1, v1, kLambda) == 0.0);
  const double z[] = {0.0, 0.0}, v[] = {0.5, 0.5};
  CHECK(jprime_loss(z, v, Temperature(1.0)) == doctest::Approx(0.5).epsilon(1e-15));

  Rng rng(10);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    const auto vv = random_simplex(4, rng);
    std::vector<double> fixed(4), other(4);
    for (std::size_t i = 0; i < 4; ++i) {
      fixed[i] = kLambda.value() * std::log(vv[i]);
      other[i] = normal(rng);
    }
    CHECK(jprime_loss(fixed, vv, kLambda) < 1e-28);
    for (double g : jprime_gradient(fixed, vv, kLambda)) CHECK(std::abs(g) < 1e-12);
    for (double g : score_gradient(fixed, vv, kLambda)) CHECK(std::abs(g) < 1e-10);

    const auto g = jprime_gradient(other, vv, kLambda);
    const auto fd = autodiff::finite_difference_oracle(
        [&](std::span<const double> p) { return jprime_loss(p, vv, kLambda); }, other, 1e-5);
    CHECK(relative_error(g, fd, 1e-6) < 1e-6);
  }
}

TEST_CASE("softmax_backward chains through the relaxation") {
  Rng rng(12);
  std::normal_distribution<double> normal;
  const std::size_t m = 4;
  std::vector<double> z(m), g(m), v(m), dv(m);
  for (std::size_t i = 0; i < m; ++i) {
    z[i] = normal(rng);
    g[i] = sample_gumbel(rng);
    dv[i] = normal(rng);
  }
  relax(z, g, kLambda, v);
  std::vector<double> dz(m, 0.0);
  softmax_backward(v, dv, kLambda, dz);
  const auto fd = autodiff::finite_difference_oracle(
      [&](std::span<const double> p) {
        std::vector<double> out(m);
        relax(p, g, kLambda, out);
        return std::inner_product(out.begin(), out.end(), dv.begin(), 0.0);
      },
      z, 1e-5);
  CHECK(relative_error(dz, fd, 1e-9) < 1e-8);
}

TEST_CASE("diagnostic battery and its negative control") {
  for (const CheckResult& r : run_diagnostics()) {
    INFO(r.id << " " << r.description << " " << r.value);
    CHECK(r.passed);
  }
  DiagnosticHooks broken;
  broken.score_gradient = [](std::span<const double> z, std::span<const double> v, Temperature l) {
    auto g = score_gradient(z, v, l);
    g[0] += 1e-3;
    return g;
  };
  CHECK_FALSE(check_score_gradient(broken, 1).passed);
  CHECK_FALSE(check_fixed_point(broken, 1).passed);
}
