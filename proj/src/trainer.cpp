#include "gmeql/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <thread>

#include "gmeql/gumbel.hpp"
#include "gmeql/refine.hpp"

namespace gmeql {

namespace {

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::string_view offline_rule_name(OfflineRule rule) {
  return rule == OfflineRule::score_gradient ? "score" : "jprime";
}

std::optional<OfflineRule> parse_offline_rule(std::string_view name) {
  if (name == "score" || name == "score_gradient") return OfflineRule::score_gradient;
  if (name == "jprime") return OfflineRule::jprime;
  return std::nullopt;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.rounds = 2;
  c.stage1_iterations = 300;
  c.batch = 20;
  c.stage2_iterations = 3000;
  c.offline_batch = 20;
  c.capacity = 100;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const char* field, const char* why) {
    throw UsageError(std::string("train.") + field + ": " + why);
  };
  if (rounds < 0) fail("n", "must be >= 0");
  if (stage1_iterations < 0) fail("m", "must be >= 0");
  if (batch < 1) fail("p", "must be >= 1");
  if (stage2_iterations < 0) fail("q", "must be >= 0");
  if (offline_batch < 1) fail("r", "must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("lr", "must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature", "must be positive");
  if (capacity < 1) fail("capacity", "must be >= 1");
  if (!(resample_fraction > 0.0 && resample_fraction <= 1.0)) {
    fail("resample_fraction", "must be in (0, 1]");
  }
  if (final_candidates < 1) fail("final_candidates", "must be >= 1");
  if (refine_iterations < 0) fail("refine_iterations", "must be >= 0");
  if (threads < 1) fail("threads", "must be >= 1");
}

struct Trainer::Worker {
  explicit Worker(const Network& net, const Dataset& data) : eval(net, data) {}
  BatchEvaluator eval;
  std::vector<double> dv;
};

Trainer::Trainer(const Network& net, TrainConfig config, const Dataset& train)
    : net_(net),
      config_(config),
      train_(train),
      lambda_(config.temperature),
      rng_(config.seed) {
  config_.validate();
  if (train.dims != net.spec().input_count) {
    throw UsageError("trainer: dataset width does not match network inputs");
  }
  if (train.rows() == 0) throw UsageError("trainer: empty training set");
  const int threads = std::min(config_.threads, config_.batch);
  workers_.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) workers_.emplace_back(net_, train_);
  for (Worker& wk : workers_) wk.dv.assign(net_.z_size(), 0.0);
  reinitialize();
  start_ms_ = now_ms();
}

Trainer::~Trainer() = default;

void Trainer::reinitialize() {
  params_ = init_parameters(net_, rng_);
  online_adam_z_.reset(net_.z_size());
  online_adam_w_.reset(net_.connection_count());
  offline_adam_.reset(net_.z_size());
}

void Trainer::evaluate_instances(std::vector<NetworkInstance>& batch, bool want_w) {
  const std::size_t count = batch.size();
  losses_.assign(count, 0.0);
  dz_.resize(count);
  dw_.resize(count);

  auto work = [&](std::size_t t) {
    Worker& wk = workers_[t];
    for (std::size_t i = t; i < count; i += workers_.size()) {
      NetworkInstance& inst = batch[i];
      std::fill(wk.dv.begin(), wk.dv.end(), 0.0);
      dz_[i].assign(net_.z_size(), 0.0);
      if (want_w) {
        dw_[i].assign(net_.connection_count(), 0.0);
      } else {
        dw_[i].clear();
      }
      losses_[i] = wk.eval.mae_and_gradient(inst.v, params_.w, 1.0, inst.labels, wk.dv, dw_[i]);
      // Only labeled connections carry a z-gradient.
      for (std::size_t c = 0; c < net_.connection_count(); ++c) {
        if (!inst.labels[c]) continue;
        const Connection& conn = net_.connection(c);
        const auto n = static_cast<std::size_t>(conn.fan_in);
        gumbel::softmax_backward({inst.v.data() + conn.z_offset, n},
                                 {wk.dv.data() + conn.z_offset, n}, lambda_,
                                 {dz_[i].data() + conn.z_offset, n});
      }
    }
  };

  if (workers_.size() == 1) {
    work(0);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers_.size(); ++t) pool.emplace_back(work, t);
  work(0);
  for (std::thread& th : pool) th.join();
}

double Trainer::batch_gradient(std::span<const NetworkInstance> instances, bool want_w,
                               std::vector<double>& dz, std::vector<double>& dw) {
  std::vector<NetworkInstance> batch(instances.begin(), instances.end());
  evaluate_instances(batch, want_w);
  dz.assign(net_.z_size(), 0.0);
  dw.assign(want_w ? net_.connection_count() : 0, 0.0);
  std::size_t valid = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!std::isfinite(losses_[i]) || !all_finite(dz_[i]) || !all_finite(dw_[i])) continue;
    ++valid;
    total += losses_[i];
    for (std::size_t k = 0; k < dz.size(); ++k) dz[k] += dz_[i][k];
    for (std::size_t k = 0; k < dw.size(); ++k) dw[k] += dw_[i][k];
  }
  if (valid == 0) return std::numeric_limits<double>::quiet_NaN();
  const double inv = 1.0 / static_cast<double>(valid);
  for (double& g : dz) g *= inv;
  for (double& g : dw) g *= inv;
  return total * inv;
}

double Trainer::online_step(EliteRepository& repo, bool train_weights, int stage) {
  // Sampling stays sequential so results do not depend on the thread count.
  std::vector<NetworkInstance> batch;
  batch.reserve(static_cast<std::size_t>(config_.batch));
  for (int i = 0; i < config_.batch; ++i) {
    if (config_.guided_sampling && !repo.empty()) {
      batch.push_back(guided_resample(net_, params_, repo.select_elite(rng_),
                                      config_.resample_fraction, lambda_, rng_));
    } else {
      batch.push_back(fresh_instance(net_, params_, lambda_, rng_));
    }
  }
  evaluate_instances(batch, train_weights);

  auto snapshot = std::make_shared<const std::vector<double>>(params_.w);
  std::vector<double> dz(net_.z_size(), 0.0);
  std::vector<double> dw(train_weights ? net_.connection_count() : 0, 0.0);
  std::size_t valid = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!std::isfinite(losses_[i]) || !all_finite(dz_[i]) || !all_finite(dw_[i])) {
      ++record_.discarded_instances;
      continue;
    }
    ++valid;
    total += losses_[i];
    for (std::size_t k = 0; k < dz.size(); ++k) dz[k] += dz_[i][k];
    for (std::size_t k = 0; k < dw.size(); ++k) dw[k] += dw_[i][k];

    NetworkInstance& inst = batch[i];
    inst.mae = losses_[i];
    inst.weights = snapshot;
    inst.key = canonical_key(extract(net_, params_.w, inst));
    repo.insert(std::move(inst));
  }

  ++iteration_;
  double batch_mae = std::numeric_limits<double>::quiet_NaN();
  if (valid == 0) {
    ++record_.skipped_iterations;
  } else {
    const double inv = 1.0 / static_cast<double>(valid);
    for (double& g : dz) g *= inv;
    for (double& g : dw) g *= inv;
    batch_mae = total * inv;
    record_.nonfinite_gradients +=
        adam_step(online_adam_z_, params_.z, dz, config_.learning_rate);
    if (train_weights) {
      record_.nonfinite_gradients +=
          adam_step(online_adam_w_, params_.w, dw, config_.learning_rate);
    }
  }

  IterationMetric m;
  m.iteration = iteration_;
  m.stage = stage;
  m.batch_mae = batch_mae;
  m.best_mae = repo.empty() ? std::numeric_limits<double>::infinity() : repo.best().mae;
  m.wall_ms = now_ms() - start_ms_;
  record_.metrics.push_back(m);
  return batch_mae;
}

std::vector<double> Trainer::offline_gradient(
    std::span<const NetworkInstance* const> batch) const {
  std::vector<double> grad(net_.z_size(), 0.0);
  if (batch.empty()) return grad;
  std::vector<double> v;
  for (const NetworkInstance* inst : batch) {
    for (const Connection& conn : net_.connections()) {
      const auto n = static_cast<std::size_t>(conn.fan_in);
      const std::span<const double> z{params_.z.data() + conn.z_offset, n};
      v.assign(inst->v.begin() + static_cast<std::ptrdiff_t>(conn.z_offset),
               inst->v.begin() + static_cast<std::ptrdiff_t>(conn.z_offset + n));
      for (double& x : v) x = std::max(x, gumbel::kInvolvementFloor);
      if (config_.offline_rule == OfflineRule::score_gradient) {
        // Maximize the log density: descend its negation.
        const auto g = gumbel::score_gradient(z, v, lambda_);
        for (std::size_t a = 0; a < n; ++a) grad[conn.z_offset + a] -= g[a];
      } else {
        const auto g = gumbel::jprime_gradient(z, v, lambda_);
        for (std::size_t a = 0; a < n; ++a) grad[conn.z_offset + a] += g[a];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= inv;
  return grad;
}

void Trainer::offline_step(const EliteRepository& repo) {
  if (repo.empty()) return;
  const std::size_t count = std::min(static_cast<std::size_t>(config_.offline_batch), repo.size());
  std::vector<const NetworkInstance*> batch;
  batch.reserve(count);
  for (std::size_t i = 0; i < count; ++i) batch.push_back(&repo.select_elite(rng_));
  const auto grad = offline_gradient(batch);
  record_.nonfinite_gradients += adam_step(offline_adam_, params_.z, grad, config_.learning_rate);
}

void Trainer::stage1(EliteRepository& repo) {
  for (int round = 0; round < config_.rounds; ++round) {
    reinitialize();
    for (int it = 0; it < config_.stage1_iterations; ++it) online_step(repo, false, 1);
  }
}

void Trainer::stage2(EliteRepository& repo) {
  reinitialize();
  for (int it = 0; it < config_.stage2_iterations; ++it) {
    online_step(repo, true, 2);
    if (config_.offline) offline_step(repo);
  }
}

double expression_mae(const ExprTree& tree, const Dataset& data) {
  if (data.rows() == 0) throw UsageError("expression_mae: empty dataset");
  double total = 0.0;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    total += std::abs(evaluate(tree, data.row(r)) - data.targets[r]);
  }
  return total / static_cast<double>(data.rows());
}

RunRecord Trainer::finish(const EliteRepository& repo, const Evaluation& eval) {
  RunRecord out = record_;
  if (repo.empty()) throw std::runtime_error("training produced no finite instance");
  out.best = repo.best();
  out.best_mae = out.best.mae;
  const auto weights_of = [&](const NetworkInstance& inst) -> std::span<const double> {
    return inst.weights ? std::span<const double>(*inst.weights) : std::span<const double>(params_.w);
  };
  out.best_expression = extract(net_, weights_of(out.best), out.best);
  out.best_expression_mae = expression_mae(out.best_expression, train_);

  out.expression = out.best_expression;
  out.expression_mae = out.best_expression_mae;
  out.selected_rank = 1;
  if (!std::isfinite(out.expression_mae)) out.expression_mae = std::numeric_limits<double>::infinity();
  const std::size_t count = std::min(repo.size(), static_cast<std::size_t>(config_.final_candidates));
  for (std::size_t rank = 0; rank < count; ++rank) {
    const NetworkInstance& inst = repo.entries()[rank];
    ExprTree tree = extract(net_, weights_of(inst), inst);
    double tree_mae = expression_mae(tree, train_);
    bool polished = false;
    if (config_.refine_iterations > 0) {
      ExprTree candidate = tree;
      refine_weights(candidate, train_, config_.refine_iterations);
      const double candidate_mae = expression_mae(candidate, train_);
      if (std::isfinite(candidate_mae) && !(candidate_mae >= tree_mae)) {
        tree = std::move(candidate);
        tree_mae = candidate_mae;
        polished = true;
      }
    }
    if (std::isfinite(tree_mae) && tree_mae < out.expression_mae) {
      out.expression = std::move(tree);
      out.expression_mae = tree_mae;
      out.selected_rank = rank + 1;
      out.refined = polished;
    }
  }

  if (eval.test) out.test_mae = expression_mae(out.expression, *eval.test);
  if (eval.ground_truth) {
    out.ground_truth_match = matches_ground_truth(out.expression, *eval.ground_truth, eval.domain);
  }
  return out;
}

RunRecord Trainer::run(EliteRepository& repo, const Evaluation& eval) {
  if (config_.stage1) stage1(repo);
  stage2(repo);
  return finish(repo, eval);
}

}  // namespace gmeql
