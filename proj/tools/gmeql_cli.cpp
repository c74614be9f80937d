// gmeql: run experiments, generate benchmark data, evaluate expressions and
// run the numerical self-checks.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gmeql/benchio.hpp"
#include "gmeql/config.hpp"
#include "gmeql/diagnostics.hpp"
#include "gmeql/expression.hpp"
#include "gmeql/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int env_threads() {
  const char* text = std::getenv("GMEQL_THREADS");
  if (!text) return 0;
  const int n = std::atoi(text);
  return n > 0 ? n : 0;
}

void write_metrics(const gmeql::RunRecord& record, const fs::path& path) {
  std::ofstream out(path);
  out << "iteration,stage,batch_mae,best_mae,wall_ms\n";
  for (const auto& m : record.metrics) {
    out << m.iteration << ',' << m.stage << ',' << exact(m.batch_mae) << ',' << exact(m.best_mae)
        << ',' << exact(m.wall_ms) << '\n';
  }
}

json expression_json(const gmeql::Expr& e) {
  switch (e.kind) {
    case gmeql::Expr::Kind::variable:
      return {{"var", "x" + std::to_string(e.variable + 1)}};
    case gmeql::Expr::Kind::constant:
      return {{"const", e.value}};
    case gmeql::Expr::Kind::apply:
      break;
  }
  json args = json::array();
  for (std::size_t j = 0; j < e.children.size(); ++j) {
    args.push_back({{"weight", e.weights[j]},
                    {"connection", e.weight_ids[j]},
                    {"input", expression_json(e.children[j])}});
  }
  return {{"fn", std::string(gmeql::function_name(e.function))}, {"args", std::move(args)}};
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed, bool desk,
            const std::string& out_override) {
  gmeql::RunManifest manifest = gmeql::load_config(config_path);
  if (desk) gmeql::apply_desk_preset(manifest);
  if (seed) {
    manifest.train.seed = *seed;
    manifest.data_seed = *seed;
  }
  if (!out_override.empty()) manifest.output_dir = out_override;
  if (const int cap = env_threads()) manifest.train.threads = cap;

  const gmeql::Benchmark* bench = nullptr;
  try {
    bench = &gmeql::find_benchmark(manifest.benchmark);
  } catch (const gmeql::UsageError&) {
    throw gmeql::ConfigError("benchmark.id", "unknown benchmark '" + manifest.benchmark + "'");
  }
  const auto data = gmeql::generate(*bench, manifest.data_seed, {manifest.noise_std});
  const gmeql::Network net(manifest.network_spec(bench->dims));
  const gmeql::ExprTree truth = bench->ground_truth();

  gmeql::EliteRepository repo(manifest.train.capacity);
  gmeql::Trainer trainer(net, manifest.train, data.train);
  gmeql::Evaluation eval;
  eval.test = &data.test;
  eval.ground_truth = &truth;
  eval.domain = bench->domain();
  const gmeql::RunRecord record = trainer.run(repo, eval);

  const fs::path dir(manifest.output_dir);
  fs::create_directories(dir);
  write_metrics(record, dir / "metrics.csv");
  {
    std::ofstream out(dir / "repository.jsonl");
    repo.export_jsonl(out, net);
  }

  json result = {
      {"manifest", gmeql::to_json(manifest)},
      {"expression", gmeql::to_string(record.expression, 4)},
      {"expression_exact", gmeql::to_string(record.expression, 17)},
      {"gain", record.expression.gain},
      {"tree", expression_json(record.expression.root)},
      {"key", gmeql::canonical_key(record.expression)},
      {"best_mae", record.best_mae},
      {"best_instance_expression", gmeql::to_string(record.best_expression, 17)},
      {"best_instance_expression_mae", record.best_expression_mae},
      {"selected_rank", record.selected_rank},
      {"train_mae", record.expression_mae},
      {"test_mae", record.test_mae.value_or(std::nan(""))},
      {"ground_truth", bench->formula},
      {"ground_truth_match", record.ground_truth_match.value_or(false)},
      {"refined", record.refined},
      {"iterations", record.metrics.size()},
      {"skipped_iterations", record.skipped_iterations},
      {"discarded_instances", record.discarded_instances},
      {"nonfinite_gradients", record.nonfinite_gradients},
      {"repository_size", repo.size()},
  };
  {
    std::ofstream out(dir / "result.json");
    out << result.dump(2) << '\n';
  }
  std::cout << "expression: " << result["expression"].get<std::string>() << '\n'
            << "best MAE:   " << exact(record.best_mae) << '\n'
            << "test MAE:   " << exact(record.test_mae.value_or(std::nan(""))) << '\n'
            << "match:      " << (record.ground_truth_match.value_or(false) ? "yes" : "no") << '\n';
  return 0;
}

int cmd_bench(const std::string& id, std::uint64_t seed, double noise, const std::string& out_dir) {
  if (!(noise >= 0.0)) throw UsageFailure("--noise must be >= 0");
  const auto& bench = gmeql::find_benchmark(id);
  const auto data = gmeql::generate(bench, seed, {noise});
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  gmeql::save_csv(data.train, dir / "train.csv");
  gmeql::save_csv(data.test, dir / "test.csv");
  json prov = {{"benchmark", bench.id},
               {"formula", bench.formula},
               {"seed", seed},
               {"noise_std", noise},
               {"rows", bench.examples},
               {"range", {bench.lo, bench.hi}},
               {"train", gmeql::provenance_json(data.train)},
               {"test", gmeql::provenance_json(data.test)}};
  std::ofstream(dir / "provenance.json") << prov.dump(2) << '\n';
  return 0;
}

int cmd_check(const std::string& fault) {
  gmeql::DiagnosticHooks hooks;
  if (fault == "score_gradient") {
    hooks.score_gradient = [](std::span<const double> z, std::span<const double> v,
                              gmeql::gumbel::Temperature lambda) {
      auto g = gmeql::gumbel::score_gradient(z, v, lambda);
      g[0] += 1e-3;
      return g;
    };
  } else if (!fault.empty()) {
    throw UsageFailure("unknown fault '" + fault + "'");
  }
  const auto results = gmeql::run_diagnostics(hooks);
  bool ok = true;
  std::printf("%-3s %-52s %-12s %-10s %s\n", "id", "check", "value", "threshold", "result");
  for (const auto& r : results) {
    std::printf("%-3s %-52s %-12.3e %-10.1e %s\n", r.id.c_str(), r.description.c_str(), r.value,
                r.threshold, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  if (!ok) {
    for (const auto& r : results) {
      if (!r.passed) std::fprintf(stderr, "check failed: (%s) %s\n", r.id.c_str(), r.description.c_str());
    }
  }
  return ok ? 0 : kExitRuntime;
}

int cmd_eval(const std::string& source, const std::string& data_path) {
  std::string text = source;
  if (fs::is_regular_file(source)) {
    std::ifstream in(source);
    if (fs::path(source).extension() == ".json") {
      const json doc = json::parse(in);
      if (!doc.contains("expression_exact")) throw UsageFailure(source + ": no expression_exact field");
      text = doc["expression_exact"].get<std::string>();
    } else {
      text.assign(std::istreambuf_iterator<char>(in), {});
    }
  }
  const gmeql::ExprTree tree = gmeql::parse_expression(text);
  const gmeql::Dataset data = gmeql::load_csv(fs::path(data_path));
  if (gmeql::variable_count(tree) > data.dims) {
    throw UsageFailure("expression uses x" + std::to_string(gmeql::variable_count(tree)) +
                       " but the dataset has " + std::to_string(data.dims) + " inputs");
  }
  std::cout << exact(gmeql::expression_mae(tree, data)) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gumbel-max equation learner"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "train on a benchmark described by a config file");
  std::string config_path, run_out;
  std::uint64_t run_seed = 0;
  bool desk = false;
  run->add_option("--config", config_path, "INI config file")->required();
  auto* seed_opt = run->add_option("--seed", run_seed, "training and data seed");
  run->add_flag("--desk", desk, "use reduced desk-scale budgets");
  run->add_option("--out", run_out, "output directory (overrides output.dir)");

  auto* bench = app.add_subcommand("bench", "write a benchmark's train and test sets");
  std::string bench_id, bench_out = ".";
  std::uint64_t bench_seed = 1;
  double noise = 0.0;
  bench->add_option("id", bench_id, "benchmark id, b1..b8")->required();
  bench->add_option("--seed", bench_seed, "data seed");
  bench->add_option("--noise", noise, "standard deviation of training-target noise");
  bench->add_option("--out", bench_out, "output directory");

  auto* check = app.add_subcommand("check", "run the numerical self-checks");
  std::string fault;
  check->add_option("--inject-fault", fault)->group("");

  auto* eval = app.add_subcommand("eval", "print the MAE of an expression on a CSV dataset");
  std::string source, data_path;
  eval->add_option("expression", source, "infix expression, expression file or result.json")
      ->required();
  eval->add_option("--data", data_path, "CSV dataset")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (run->parsed()) {
      std::optional<std::uint64_t> seed;
      if (seed_opt->count()) seed = run_seed;
      return cmd_run(config_path, seed, desk, run_out);
    }
    if (bench->parsed()) return cmd_bench(bench_id, bench_seed, noise, bench_out);
    if (check->parsed()) return cmd_check(fault);
    if (eval->parsed()) return cmd_eval(source, data_path);
  } catch (const gmeql::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const gmeql::ParseError& e) {
    std::cerr << "parse error at position " << e.position() << ": " << e.what() << '\n';
    return kExitUsage;
  } catch (const gmeql::DataParseError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const gmeql::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
