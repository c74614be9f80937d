#pragma once

// Two-stage training.
//
// Stage 1 runs `rounds` independent restarts; each re-initializes every
// parameter and trains only the structure parameters online for
// `stage1_iterations` steps. Stage 2 re-initializes once more and for
// `stage2_iterations` steps trains structure and regression parameters online,
// followed by one offline update of the structure parameters from instances
// drawn out of the elite repository. The repository persists across all
// rounds and both stages.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gmeql/adam.hpp"
#include "gmeql/batch_evaluator.hpp"
#include "gmeql/dataset.hpp"
#include "gmeql/expression.hpp"
#include "gmeql/network.hpp"
#include "gmeql/random.hpp"
#include "gmeql/repository.hpp"

namespace gmeql {

enum class OfflineRule { score_gradient, jprime };

std::string_view offline_rule_name(OfflineRule rule);
std::optional<OfflineRule> parse_offline_rule(std::string_view name);

struct TrainConfig {
  int rounds = 3;                // n
  int stage1_iterations = 2000;  // m
  int batch = 40;                // p
  int stage2_iterations = 48000; // q
  int offline_batch = 40;        // r
  double learning_rate = 0.001;
  double temperature = 2.0 / 3.0;
  std::size_t capacity = 400;
  double resample_fraction = 0.2;
  OfflineRule offline_rule = OfflineRule::score_gradient;
  std::uint64_t seed = 1;

  // Ablation switches.
  bool stage1 = true;
  bool guided_sampling = true;
  bool offline = true;

  /// The final expression is the best, by train MAE after weight polishing,
  /// of the hardened trees of the `final_candidates` top repository entries.
  int final_candidates = 100;
  /// Levenberg-Marquardt iterations spent polishing each candidate's weights;
  /// 0 disables polishing.
  int refine_iterations = 200;
  int threads = 1;

  static TrainConfig full_scale() { return {}; }
  /// Reduced budgets: n=2, m=300, p=20, q=3000, r=20, capacity 100.
  static TrainConfig desk();

  /// Throws UsageError naming the first invalid field.
  void validate() const;
};

struct IterationMetric {
  int iteration = 0;  // global, 1-based across both stages
  int stage = 1;
  double batch_mae = 0.0;
  double best_mae = 0.0;
  double wall_ms = 0.0;
};

struct RunRecord {
  std::vector<IterationMetric> metrics;
  NetworkInstance best;          // T*
  double best_mae = 0.0;         // repository MAE of T*
  ExprTree best_expression;      // hardened tree of T* with its own weights
  double best_expression_mae = 0.0;
  ExprTree expression;           // final reported expression
  double expression_mae = 0.0;   // its train MAE
  std::size_t selected_rank = 1; // repository rank it was read from
  bool refined = false;          // whether its weights were polished
  std::optional<double> test_mae;
  std::optional<bool> ground_truth_match;
  std::size_t skipped_iterations = 0;
  std::size_t discarded_instances = 0;
  std::size_t nonfinite_gradients = 0;
};

/// Optional evaluation material for the final report.
struct Evaluation {
  const Dataset* test = nullptr;
  const ExprTree* ground_truth = nullptr;
  Domain domain;
};

class Trainer {
 public:
  Trainer(const Network& net, TrainConfig config, const Dataset& train);
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Runs every enabled stage and the final report.
  RunRecord run(EliteRepository& repo, const Evaluation& eval = {});

  void stage1(EliteRepository& repo);
  void stage2(EliteRepository& repo);
  RunRecord finish(const EliteRepository& repo, const Evaluation& eval);

  /// Re-draws all parameters from N(0, 1) and clears optimizer state.
  void reinitialize();

  /// Samples, evaluates and stores one batch, then takes one Adam step on z
  /// (and w when `train_weights`). Returns the batch-average MAE, or NaN when
  /// every instance was discarded.
  double online_step(EliteRepository& repo, bool train_weights, int stage);
  /// One offline update of z from min(r, |repo|) power-law draws.
  void offline_step(const EliteRepository& repo);

  /// Batch loss gradient for fixed instances, as handed to the optimizer:
  /// dz is masked to labeled connections; dw is empty when not requested.
  double batch_gradient(std::span<const NetworkInstance> instances, bool want_w,
                        std::vector<double>& dz, std::vector<double>& dw);
  /// Offline gradient of the configured rule (ascent direction for the score
  /// rule is returned negated so that both rules are descended).
  std::vector<double> offline_gradient(std::span<const NetworkInstance* const> batch) const;

  Parameters& parameters() { return params_; }
  const Parameters& parameters() const { return params_; }
  const TrainConfig& config() const { return config_; }
  Rng& rng() { return rng_; }
  const RunRecord& record() const { return record_; }
  long adam_steps() const { return online_adam_z_.step; }

 private:
  struct Worker;

  void evaluate_instances(std::vector<NetworkInstance>& batch, bool want_w);

  const Network& net_;
  TrainConfig config_;
  const Dataset& train_;
  gumbel::Temperature lambda_;
  Rng rng_;
  Parameters params_;
  AdamState online_adam_z_;
  AdamState online_adam_w_;
  AdamState offline_adam_;
  RunRecord record_;
  int iteration_ = 0;
  double start_ms_ = 0.0;
  std::vector<Worker> workers_;
  // Per-instance scratch, indexed by batch position.
  std::vector<double> losses_;
  std::vector<std::vector<double>> dz_;
  std::vector<std::vector<double>> dw_;
};

/// Train-set MAE of an expression tree.
double expression_mae(const ExprTree& tree, const Dataset& data);

}  // namespace gmeql
