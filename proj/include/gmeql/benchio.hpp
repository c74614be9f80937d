#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "gmeql/dataset.hpp"
#include "gmeql/expression.hpp"

namespace gmeql {

/// One row of the benchmark table: a ground-truth formula with its input
/// dimension and the open interval every variable is drawn from.
struct Benchmark {
  std::string id;
  std::string formula;
  int dims = 0;
  double lo = 0.0;
  double hi = 0.0;
  int examples = 300;

  ExprTree ground_truth() const { return parse_expression(formula); }
  Domain domain() const { return {dims, lo, hi}; }
};

std::span<const Benchmark> benchmarks();
/// Throws UsageError for an unknown id.
const Benchmark& find_benchmark(std::string_view id);

struct NoiseSpec {
  double std = 0.0;
};

struct BenchmarkData {
  Dataset train;  // targets carry the Gaussian noise
  Dataset test;   // clean targets
};

/// Train and test sets with `examples` rows each; both fully determined by
/// (benchmark, seed, noise).
BenchmarkData generate(const Benchmark& benchmark, std::uint64_t seed, NoiseSpec noise);

class DataParseError : public std::runtime_error {
 public:
  DataParseError(const std::string& message, std::size_t line);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// CSV with header x1,...,xd,y and 17 significant digits per value.
void save_csv(const Dataset& data, std::ostream& out);
void save_csv(const Dataset& data, const std::filesystem::path& path);
Dataset load_csv(std::istream& in);
Dataset load_csv(const std::filesystem::path& path);

nlohmann::json provenance_json(const Dataset& data);

}  // namespace gmeql
