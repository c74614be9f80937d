#include "gmeql/benchio.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "gmeql/network.hpp"

namespace gmeql {

namespace {

const Benchmark kBenchmarks[] = {
    {"b1", "0.8*x1^3 + 0.9*x2^2 + 1.2*x3", 3, 0.0, 2.0},
    {"b2", "0.8*x3^4 + 0.8*x1^3 + 1.2*x2^2 + 1.4*x3", 3, 0.0, 2.0},
    {"b3", "0.8*x3^5 + 1.2*x2^4 + 1.2*x1^3 + 0.9*x2^2 + 1.1*x3", 3, 0.0, 2.0},
    {"b4", "1.1*x1^6 + 0.8*x2^5 + 0.9*x3^4 + 1.3*x1^3 + 1.2*x2^2 + 0.9*x3", 3, 0.0, 2.0},
    {"b5", "1.5*sin(x1) + 1.3*sin(x2^2)", 2, 0.0, 10.0},
    {"b6", "1.2*sin(1.1*x1)*cos(0.9*x2)", 2, 0.0, 10.0},
    {"b7", "1.1*x1 + 0.9*x2 + 2.1*x1*x2*cos(1.2*x3)", 3, 0.0, 10.0},
    {"b8", "sqrt(1.3 + 1.2*x2/x1)", 3, 1.0, 20.0},
};

void fill_inputs(const Benchmark& b, Rng& rng, Dataset& data) {
  std::uniform_real_distribution<double> uniform(b.lo, b.hi);
  data.dims = b.dims;
  data.inputs.resize(static_cast<std::size_t>(b.examples) * static_cast<std::size_t>(b.dims));
  for (double& x : data.inputs) {
    do {
      x = uniform(rng);
    } while (x <= b.lo);
  }
}

}  // namespace

std::span<const Benchmark> benchmarks() { return kBenchmarks; }

const Benchmark& find_benchmark(std::string_view id) {
  for (const Benchmark& b : kBenchmarks) {
    if (b.id == id) return b;
  }
  throw UsageError("unknown benchmark id '" + std::string(id) + "'");
}

BenchmarkData generate(const Benchmark& benchmark, std::uint64_t seed, NoiseSpec noise) {
  if (!(noise.std >= 0.0)) throw UsageError("noise std must be >= 0");
  Rng rng(seed);
  BenchmarkData out;
  fill_inputs(benchmark, rng, out.train);
  fill_inputs(benchmark, rng, out.test);

  const ExprTree truth = benchmark.ground_truth();
  const auto rows = static_cast<std::size_t>(benchmark.examples);
  out.train.targets.resize(rows);
  out.test.targets.resize(rows);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    out.train.targets[r] = evaluate(truth, out.train.row(r));
    if (noise.std > 0.0) out.train.targets[r] += noise.std * gauss(rng);
    out.test.targets[r] = evaluate(truth, out.test.row(r));
  }
  out.train.provenance = {benchmark.id, seed, noise.std, "train"};
  out.test.provenance = {benchmark.id, seed, 0.0, "test"};
  return out;
}

DataParseError::DataParseError(const std::string& message, std::size_t line)
    : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

void save_csv(const Dataset& data, std::ostream& out) {
  for (int d = 0; d < data.dims; ++d) out << 'x' << d + 1 << ',';
  out << "y\n";
  char buf[40];
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (double x : data.row(r)) {
      std::snprintf(buf, sizeof buf, "%.17g,", x);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, "%.17g\n", data.targets[r]);
    out << buf;
  }
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  save_csv(data, out);
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) return cells;
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

Dataset load_csv(std::istream& in) {
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    const auto cells = split(text);
    if (columns == 0) {
      columns = cells.size();
      if (columns < 2) throw DataParseError("header needs at least one input and y", line_no);
      for (std::size_t i = 0; i + 1 < columns; ++i) {
        if (trim(cells[i]) != "x" + std::to_string(i + 1)) {
          throw DataParseError("header column " + std::to_string(i + 1) + " must be x" +
                                   std::to_string(i + 1),
                               line_no);
        }
      }
      if (trim(cells.back()) != "y") throw DataParseError("last header column must be y", line_no);
      data.dims = static_cast<int>(columns - 1);
      continue;
    }
    if (cells.size() != columns) {
      throw DataParseError("expected " + std::to_string(columns) + " cells, found " +
                               std::to_string(cells.size()),
                           line_no);
    }
    for (std::size_t i = 0; i < columns; ++i) {
      const std::string_view cell = trim(cells[i]);
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty()) {
        throw DataParseError("non-numeric cell '" + std::string(cell) + "'", line_no);
      }
      if (i + 1 < columns) {
        data.inputs.push_back(value);
      } else {
        data.targets.push_back(value);
      }
    }
  }
  if (columns == 0) throw DataParseError("missing header", line_no + 1);
  if (data.rows() == 0) throw DataParseError("no data rows", line_no + 1);
  return data;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return load_csv(in);
}

nlohmann::json provenance_json(const Dataset& data) {
  return {{"benchmark", data.provenance.benchmark},
          {"seed", data.provenance.seed},
          {"noise_std", data.provenance.noise_std},
          {"split", data.provenance.split},
          {"rows", data.rows()},
          {"dims", data.dims}};
}

}  // namespace gmeql
