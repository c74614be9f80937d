#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gmeql/adam.hpp"
#include "gmeql/diagnostics.hpp"
#include "gmeql/trainer.hpp"

using namespace gmeql;
using FK = FunctionKind;

namespace {

Dataset sum_data(int rows, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  Dataset d;
  d.dims = 2;
  for (int r = 0; r < rows; ++r) {
    const double a = u(rng), b = u(rng);
    d.inputs.push_back(a);
    d.inputs.push_back(b);
    d.targets.push_back(a + b);
  }
  return d;
}

NetworkSpec small_spec() {
  NetworkSpec spec;
  spec.input_count = 2;
  spec.hidden_layers = {{FK::add, FK::mul, FK::sin}, {FK::add}};
  return spec;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.rounds = 1;
  c.stage1_iterations = 20;
  c.batch = 6;
  c.stage2_iterations = 30;
  c.offline_batch = 4;
  c.capacity = 20;
  c.final_candidates = 5;
  c.refine_iterations = 20;
  c.seed = 77;
  return c;
}

double instance_loss(const Network& net, std::span<const double> theta,
                     std::span<const NetworkInstance> batch, const Dataset& data, double lambda) {
  Parameters p;
  p.z.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(net.z_size()));
  p.w.assign(theta.begin() + static_cast<std::ptrdiff_t>(net.z_size()), theta.end());
  double total = 0.0;
  for (NetworkInstance inst : batch) {
    for (std::size_t c = 0; c < net.connection_count(); ++c) {
      if (!inst.labels[c]) continue;
      const Connection& conn = net.connection(c);
      const auto n = static_cast<std::size_t>(conn.fan_in);
      gumbel::relax({p.z.data() + conn.z_offset, n}, {inst.gumbel.data() + conn.z_offset, n},
                    gumbel::Temperature(lambda), {inst.v.data() + conn.z_offset, n});
    }
    total += mae(net, p, inst, data);
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("adam") {
  AdamState s(3);
  std::vector<double> p = {1.0, -2.0, 0.5};
  const std::vector<double> zero(3, 0.0);
  adam_step(s, p, zero, 1e-3);
  CHECK(p == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(s.step == 1);

  AdamState t(3);
  std::vector<double> q = {1.0, -2.0, 0.5};
  const std::vector<double> g = {3.0, -0.01, 1e-6};
  adam_step(t, q, g, 1e-3);
  const double before[] = {1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < 3; ++i) {
    const double delta = q[i] - before[i];
    CHECK(std::abs(delta) <= 1e-3 * (1.0 + 1e-6));
    CHECK(delta * g[i] < 0.0);
  }
  CHECK(std::abs(q[0] - before[0]) == doctest::Approx(1e-3).epsilon(1e-6));

  // Moments accumulate across calls. With a constant gradient the
  // bias-corrected step stays the same, so statefulness shows once the
  // gradient changes: a fresh state would take a full lr-sized step.
  const std::vector<double> m1 = t.m, v1 = t.v;
  adam_step(t, q, g, 1e-3);
  CHECK(t.step == 2);
  CHECK(t.m != m1);
  CHECK(t.v != v1);
  CHECK(t.m[0] == doctest::Approx(0.19 * 3.0).epsilon(1e-12));
  const std::vector<double> flipped = {-3.0, 0.01, -1e-6};
  std::vector<double> q2 = q, fresh_q = q;
  AdamState fresh(3);
  adam_step(t, q2, flipped, 1e-3);
  adam_step(fresh, fresh_q, flipped, 1e-3);
  CHECK(std::abs(q2[0] - q[0]) < 0.5e-3);
  CHECK(std::abs(fresh_q[0] - q[0]) == doctest::Approx(1e-3).epsilon(1e-6));

  AdamState u(2);
  std::vector<double> r = {0.0, 0.0};
  const std::vector<double> bad = {std::nan(""), 1.0};
  CHECK(adam_step(u, r, bad, 1e-3) == 1);
  CHECK(r[0] == 0.0);
  CHECK(r[1] < 0.0);
  CHECK_THROWS(adam_step(u, r, zero, 1e-3));
}

TEST_CASE("config validation") {
  CHECK_NOTHROW(TrainConfig::full_scale().validate());
  const TrainConfig desk = TrainConfig::desk();
  CHECK(desk.rounds == 2);
  CHECK(desk.stage1_iterations == 300);
  CHECK(desk.batch == 20);
  CHECK(desk.stage2_iterations == 3000);
  CHECK(desk.offline_batch == 20);
  CHECK(desk.capacity == 100);
  TrainConfig c;
  c.batch = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("train.p"), UsageError);
  c = {};
  c.learning_rate = 0.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("train.lr"), UsageError);
  c = {};
  c.resample_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("one iteration of stage 1") {
  NetworkSpec spec;
  spec.input_count = 1;
  spec.constant_node = false;
  spec.hidden_layers = {{FK::pow2}};
  const Network net(spec);
  Dataset d;
  d.dims = 1;
  d.inputs = {1.0, 2.0};
  d.targets = {1.0, 4.0};
  TrainConfig c = tiny_config();
  c.rounds = 1;
  c.stage1_iterations = 1;
  c.batch = 2;
  Trainer trainer(net, c, d);
  EliteRepository repo(c.capacity);
  trainer.stage1(repo);
  CHECK(repo.size() >= 1);
  CHECK(repo.size() <= 2);
  CHECK(trainer.adam_steps() == 1);
  CHECK(trainer.record().metrics.size() == 1);
}

TEST_CASE("stage 1 never touches the regression weights") {
  const Network net(small_spec());
  const Dataset d = sum_data(40, 1);
  Trainer trainer(net, tiny_config(), d);
  EliteRepository repo(20);
  const std::vector<double> w = trainer.parameters().w;
  const std::vector<double> z = trainer.parameters().z;
  for (int i = 0; i < 50; ++i) trainer.online_step(repo, false, 1);
  CHECK(trainer.parameters().w == w);
  CHECK(trainer.parameters().z != z);

  trainer.online_step(repo, true, 2);
  CHECK(trainer.parameters().w != w);
}

TEST_CASE("gradients are masked to labeled connections") {
  const Network net(small_spec());
  const Dataset d = sum_data(30, 2);
  Trainer trainer(net, tiny_config(), d);
  Rng rng(3);
  const gumbel::Temperature lambda(2.0 / 3.0);
  const auto& params = trainer.parameters();
  const NetworkInstance elite = fresh_instance(net, params, lambda, rng);
  std::vector<NetworkInstance> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(guided_resample(net, params, elite, 0.2, lambda, rng));

  std::vector<double> dz, dw;
  trainer.batch_gradient(batch, true, dz, dw);
  std::size_t nonzero = 0;
  for (std::size_t c = 0; c < net.connection_count(); ++c) {
    const bool any = std::any_of(batch.begin(), batch.end(),
                                 [&](const NetworkInstance& b) { return b.labels[c] != 0; });
    const Connection& conn = net.connection(c);
    for (int l = 0; l < conn.fan_in; ++l) {
      const double g = dz[conn.z_offset + static_cast<std::size_t>(l)];
      if (!any) CHECK(g == 0.0);
      if (g != 0.0) ++nonzero;
    }
  }
  CHECK(nonzero > 0);
  CHECK(dw.size() == net.connection_count());
}

TEST_CASE("online gradient matches finite differences with draws held fixed") {
  const Network net(small_spec());
  const Dataset d = sum_data(25, 4);
  Trainer trainer(net, tiny_config(), d);
  Rng rng(5);
  const gumbel::Temperature lambda(2.0 / 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    trainer.reinitialize();
    const auto& params = trainer.parameters();
    const NetworkInstance elite = fresh_instance(net, params, lambda, rng);
    std::vector<NetworkInstance> batch;
    batch.push_back(fresh_instance(net, params, lambda, rng));
    for (int i = 0; i < 3; ++i) batch.push_back(guided_resample(net, params, elite, 0.4, lambda, rng));

    std::vector<double> dz, dw;
    trainer.batch_gradient(batch, true, dz, dw);
    std::vector<double> theta = params.z;
    theta.insert(theta.end(), params.w.begin(), params.w.end());
    const auto fd = autodiff::finite_difference_oracle(
        [&](std::span<const double> t) { return instance_loss(net, t, batch, d, lambda.value()); },
        theta, 1e-6);
    std::vector<double> analytic = dz;
    analytic.insert(analytic.end(), dw.begin(), dw.end());
    worst = std::max(worst, relative_error(analytic, fd, 1e-3));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("runs are deterministic and independent of the thread count") {
  const Network net(small_spec());
  const Dataset d = sum_data(40, 6);
  auto run = [&](int threads) {
    TrainConfig c = tiny_config();
    c.threads = threads;
    Trainer trainer(net, c, d);
    EliteRepository repo(c.capacity);
    return std::make_pair(trainer.run(repo), std::vector<double>(trainer.parameters().z));
  };
  const auto [a, za] = run(1);
  const auto [b, zb] = run(1);
  const auto [t, zt] = run(3);
  for (const auto* other : {&b, &t}) {
    REQUIRE(a.metrics.size() == other->metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
      CHECK(a.metrics[i].batch_mae == other->metrics[i].batch_mae);
      CHECK(a.metrics[i].best_mae == other->metrics[i].best_mae);
    }
    CHECK(a.best.v == other->best.v);
    CHECK(a.best_mae == other->best_mae);
    CHECK(to_string(a.expression, 17) == to_string(other->expression, 17));
    CHECK(a.expression_mae == other->expression_mae);
  }
  CHECK(za == zb);
  CHECK(za == zt);
  CHECK(a.metrics.size() == 50);
}

TEST_CASE("best repository MAE never increases") {
  const Network net(small_spec());
  const Dataset d = sum_data(40, 7);
  TrainConfig c = tiny_config();
  c.stage2_iterations = 200;
  Trainer trainer(net, c, d);
  EliteRepository repo(c.capacity);
  const RunRecord r = trainer.run(repo);
  for (std::size_t i = 1; i < r.metrics.size(); ++i) {
    CHECK(r.metrics[i].best_mae <= r.metrics[i - 1].best_mae);
    CHECK(r.metrics[i].iteration == r.metrics[i - 1].iteration + 1);
  }
  CHECK(r.best_mae == repo.best().mae);
  CHECK(r.expression_mae <= r.best_expression_mae);
  CHECK(r.selected_rank >= 1);
  CHECK(r.selected_rank <= c.final_candidates);
}

TEST_CASE("offline updates concentrate mass on a stored instance") {
  NetworkSpec spec;
  spec.input_count = 2;
  spec.hidden_layers = {{FK::add}};
  const Network net(spec);
  REQUIRE(net.connection_count() == 3);
  const Dataset d = sum_data(10, 8);
  for (OfflineRule rule : {OfflineRule::score_gradient, OfflineRule::jprime}) {
    TrainConfig c = tiny_config();
    c.offline_rule = rule;
    c.offline_batch = 40;
    Trainer trainer(net, c, d);
    Rng rng(9);
    EliteRepository repo(5);
    NetworkInstance stored = fresh_instance(net, trainer.parameters(), gumbel::Temperature(2.0 / 3.0), rng);
    stored.mae = 1.0;
    stored.key = "only";
    repo.insert(stored);
    const auto choices = harden(net, stored);
    const auto mass = [&] {
      double m = 1.0;
      for (std::size_t k = 0; k < net.connection_count(); ++k) {
        const Connection& conn = net.connection(k);
        const auto p = gumbel::selection_probability(
            {trainer.parameters().z.data() + conn.z_offset, static_cast<std::size_t>(conn.fan_in)});
        m *= p[static_cast<std::size_t>(choices[k])];
      }
      return m;
    };
    const double before = mass();
    for (int i = 0; i < 500; ++i) trainer.offline_step(repo);
    INFO(offline_rule_name(rule));
    CHECK(mass() > before);
  }
}

TEST_CASE("offline batch is clamped to the repository size") {
  const Network net(small_spec());
  const Dataset d = sum_data(20, 10);
  TrainConfig c = tiny_config();
  c.stage1 = false;
  c.stage2_iterations = 1;
  c.offline_batch = 1000;
  Trainer trainer(net, c, d);
  EliteRepository repo(c.capacity);
  const RunRecord r = trainer.run(repo);
  CHECK(r.metrics.size() == 1);
  CHECK(repo.size() <= static_cast<std::size_t>(c.batch));
}

TEST_CASE("offline gradient of each rule") {
  const Network net(small_spec());
  const Dataset d = sum_data(20, 11);
  Rng rng(12);
  const gumbel::Temperature lambda(2.0 / 3.0);
  for (OfflineRule rule : {OfflineRule::score_gradient, OfflineRule::jprime}) {
    TrainConfig c = tiny_config();
    c.offline_rule = rule;
    Trainer trainer(net, c, d);
    // At exp(z) = v^lambda both rules are stationary.
    NetworkInstance inst = fresh_instance(net, trainer.parameters(), lambda, rng);
    for (std::size_t i = 0; i < net.z_size(); ++i) {
      trainer.parameters().z[i] = lambda.value() * std::log(inst.v[i]);
    }
    const NetworkInstance* batch[] = {&inst};
    for (double g : trainer.offline_gradient(batch)) CHECK(std::abs(g) < 1e-10);

    // Elsewhere, the score rule returns minus the mean log-density gradient.
    trainer.reinitialize();
    const NetworkInstance other = fresh_instance(net, trainer.parameters(), lambda, rng);
    const NetworkInstance* pair[] = {&inst, &other};
    const auto g = trainer.offline_gradient(pair);
    for (const Connection& conn : net.connections()) {
      const auto n = static_cast<std::size_t>(conn.fan_in);
      const std::span<const double> z{trainer.parameters().z.data() + conn.z_offset, n};
      const auto ga = rule == OfflineRule::score_gradient
                          ? gumbel::score_gradient(z, {inst.v.data() + conn.z_offset, n}, lambda)
                          : gumbel::jprime_gradient(z, {inst.v.data() + conn.z_offset, n}, lambda);
      const auto gb = rule == OfflineRule::score_gradient
                          ? gumbel::score_gradient(z, {other.v.data() + conn.z_offset, n}, lambda)
                          : gumbel::jprime_gradient(z, {other.v.data() + conn.z_offset, n}, lambda);
      const double sign = rule == OfflineRule::score_gradient ? -1.0 : 1.0;
      for (std::size_t a = 0; a < n; ++a) {
        CHECK(g[conn.z_offset + a] == doctest::Approx(sign * 0.5 * (ga[a] + gb[a])).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("final expression is no worse than the best instance's tree") {
  const Network net(small_spec());
  const Dataset d = sum_data(40, 13);
  TrainConfig c = tiny_config();
  Trainer trainer(net, c, d);
  EliteRepository repo(c.capacity);
  const auto truth = parse_expression("x1 + x2");
  const Evaluation eval{&d, &truth, Domain{2, 0.0, 2.0}};
  const RunRecord r = trainer.run(repo, eval);
  CHECK(r.expression_mae <= r.best_expression_mae);
  REQUIRE(r.test_mae.has_value());
  CHECK(*r.test_mae == doctest::Approx(r.expression_mae).epsilon(1e-12));
  CHECK(r.ground_truth_match.has_value());
}

TEST_CASE("trainer rejects mismatched data") {
  const Network net(small_spec());
  Dataset d;
  d.dims = 3;
  d.inputs = {1, 2, 3};
  d.targets = {1};
  CHECK_THROWS_AS(Trainer(net, tiny_config(), d), UsageError);
  Dataset empty;
  empty.dims = 2;
  CHECK_THROWS_AS(Trainer(net, tiny_config(), empty), UsageError);
}
