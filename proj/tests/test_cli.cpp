#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "gmeql/benchio.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int status = -1;
  std::string output;  // stdout and stderr
};

Outcome cli(const std::string& args) {
  const std::string cmd = std::string(GMEQL_CLI) + " " + args + " 2>&1";
  Outcome out;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) out.output.append(buf, n);
  const int raw = pclose(pipe);
  out.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gmeql_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinyRun = R"([network]
hidden_layers = 2
functions = add,mul,pow2,pow3,sum
[train]
n = 1
m = 10
p = 5
q = 40
r = 5
capacity = 20
final_candidates = 5
refine_iterations = 20
[benchmark]
id = b1
)";

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli("").status == 2);
  CHECK(cli("frobnicate").status == 2);
  CHECK(cli("run").status == 2);
  CHECK(cli("bench b9").status == 2);
  CHECK(cli("bench b1 --noise -1 --out " + scratch("neg").string()).status == 2);
  CHECK(cli("check --inject-fault nothing").status == 2);
  CHECK(cli("--help").status == 0);
}

TEST_CASE("bench writes the benchmark files") {
  const fs::path dir = scratch("bench");
  REQUIRE(cli("bench b1 --seed 1 --out " + (dir / "a").string()).status == 0);
  std::ifstream train(dir / "a" / "train.csv");
  std::string line;
  int rows = 0;
  std::getline(train, line);
  CHECK(line == "x1,x2,x3,y");
  while (std::getline(train, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 3);
  }
  CHECK(rows == 300);

  REQUIRE(cli("bench b1 --seed 1 --out " + (dir / "b").string()).status == 0);
  for (const char* f : {"train.csv", "test.csv", "provenance.json"}) {
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }

  REQUIRE(cli("bench b8 --noise 0.5 --out " + (dir / "c").string()).status == 0);
  const auto prov = nlohmann::json::parse(slurp(dir / "c" / "provenance.json"));
  CHECK(prov["noise_std"] == 0.5);
  CHECK(prov["benchmark"] == "b8");
  CHECK(prov["train"]["noise_std"] == 0.5);
  CHECK(prov["test"]["noise_std"] == 0.0);
}

TEST_CASE("eval") {
  const fs::path dir = scratch("eval");
  REQUIRE(cli("bench b1 --seed 2 --out " + dir.string()).status == 0);
  const std::string data = " --data " + (dir / "test.csv").string();

  const Outcome truth = cli("eval \"0.8*x1^3 + 0.9*x2^2 + 1.2*x3\"" + data);
  REQUIRE(truth.status == 0);
  CHECK(std::stod(truth.output) <= 1e-12);

  const gmeql::Dataset test = gmeql::load_csv(dir / "test.csv");
  double mean_abs = 0.0;
  for (double y : test.targets) mean_abs += std::abs(y);
  mean_abs /= static_cast<double>(test.rows());
  const Outcome zero = cli("eval 0" + data);
  REQUIRE(zero.status == 0);
  CHECK(std::stod(zero.output) == doctest::Approx(mean_abs).epsilon(1e-15));

  write(dir / "expr.txt", "x1 + x2\n");
  CHECK(cli("eval " + (dir / "expr.txt").string() + data).status == 0);

  const Outcome bad = cli("eval \"sin(\"" + data);
  CHECK(bad.status == 2);
  CHECK(bad.output.find("position 4") != std::string::npos);
  CHECK(cli("eval x4" + data).status == 2);
  write(dir / "broken.csv", "x1,y\n1,2\nnope,3\n");
  CHECK(cli("eval x1 --data " + (dir / "broken.csv").string()).status == 2);
  CHECK(cli("eval x1 --data " + (dir / "missing.csv").string()).status == 1);
}

TEST_CASE("check") {
  const Outcome ok = cli("check");
  CHECK(ok.status == 0);
  CHECK(ok.output.find("FAIL") == std::string::npos);
  CHECK(std::count(ok.output.begin(), ok.output.end(), '\n') >= 6);

  const Outcome broken = cli("check --inject-fault score_gradient");
  CHECK(broken.status != 0);
  CHECK(broken.output.find("check failed: (c)") != std::string::npos);
  CHECK(broken.output.find("check failed: (d)") != std::string::npos);
}

TEST_CASE("run writes reproducible artifacts") {
  const fs::path dir = scratch("run");
  write(dir / "tiny.ini", kTinyRun);
  const std::string base = "run --config " + (dir / "tiny.ini").string() + " --seed 7 --out ";
  REQUIRE(cli(base + (dir / "a").string()).status == 0);
  REQUIRE(cli(base + (dir / "b").string()).status == 0);
  // Only the output directory may differ.
  auto result = nlohmann::json::parse(slurp(dir / "a" / "result.json"));
  auto again = nlohmann::json::parse(slurp(dir / "b" / "result.json"));
  CHECK(result["manifest"]["output"]["dir"] == (dir / "a").string());
  result["manifest"]["output"].erase("dir");
  again["manifest"]["output"].erase("dir");
  CHECK(result.dump() == again.dump());
  CHECK(slurp(dir / "a" / "repository.jsonl") == slurp(dir / "b" / "repository.jsonl"));

  CHECK(result["manifest"]["train"]["seed"] == 7);
  CHECK(result["manifest"]["benchmark"]["data_seed"] == 7);
  CHECK(result["manifest"]["train"]["q"] == 40);
  CHECK(result["manifest"]["train"].contains("lr"));
  CHECK(result["iterations"] == 50);
  CHECK(result.contains("ground_truth_match"));

  std::ifstream metrics(dir / "a" / "metrics.csv");
  std::string line;
  std::getline(metrics, line);
  CHECK(line == "iteration,stage,batch_mae,best_mae,wall_ms");
  int rows = 0;
  while (std::getline(metrics, line)) ++rows;
  CHECK(rows == 50);

  // The reported expression evaluates to the reported train MAE.
  REQUIRE(cli("bench b1 --seed 7 --out " + (dir / "data").string()).status == 0);
  const Outcome e = cli("eval " + (dir / "a" / "result.json").string() + " --data " +
                        (dir / "data" / "train.csv").string());
  REQUIRE(e.status == 0);
  CHECK(std::stod(e.output) == doctest::Approx(result["train_mae"].get<double>()).epsilon(1e-9));

  const Outcome other = cli("run --config " + (dir / "tiny.ini").string() + " --seed 8 --out " +
                            (dir / "c").string());
  REQUIRE(other.status == 0);
  auto third = nlohmann::json::parse(slurp(dir / "c" / "result.json"));
  third["manifest"]["output"].erase("dir");
  CHECK(third["manifest"]["train"]["seed"] == 8);
  CHECK(third["best_mae"] != result["best_mae"]);
}

TEST_CASE("bad configs exit with 2 and name the field") {
  const fs::path dir = scratch("config");
  write(dir / "nobench.ini", "[train]\nq = 5\n");
  const Outcome missing = cli("run --config " + (dir / "nobench.ini").string());
  CHECK(missing.status == 2);
  CHECK(missing.output.find("benchmark.id") != std::string::npos);

  write(dir / "unknown.ini", "[benchmark]\nid = b42\n");
  const Outcome unknown = cli("run --config " + (dir / "unknown.ini").string());
  CHECK(unknown.status == 2);
  CHECK(unknown.output.find("benchmark.id") != std::string::npos);

  write(dir / "typo.ini", "[benchmark]\nid = b1\n[train]\nlearning_rate = 0.1\n");
  const Outcome typo = cli("run --config " + (dir / "typo.ini").string());
  CHECK(typo.status == 2);
  CHECK(typo.output.find("train.learning_rate") != std::string::npos);

  CHECK(cli("run --config " + (dir / "absent.ini").string()).status == 2);
}
