#pragma once

// INI run configuration with sections [network], [train], [benchmark],
// [noise] and [output]. Unknown keys are rejected so typos surface as errors.

#include <cstdint>
#include <filesystem>
#include <iterator>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmeql/functions.hpp"
#include "gmeql/network.hpp"
#include "gmeql/trainer.hpp"

namespace gmeql {

/// Invalid or missing configuration value; `field()` is "section.key".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message);
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct RunManifest {
  std::string config_path;
  // [network]
  int hidden_layers = 3;
  int sum_arity = 3;
  bool constant_node = true;
  std::vector<FunctionKind> functions{std::begin(kAllFunctionKinds), std::end(kAllFunctionKinds)};
  /// Explicit node lists, one per hidden layer ("sin,sin,cos/mul"); when set
  /// it replaces `functions` and `hidden_layers`. Repeats give extra nodes.
  std::vector<std::vector<FunctionKind>> layers;
  // [train]
  TrainConfig train;
  // [benchmark]
  std::string benchmark;
  std::uint64_t data_seed = 1;
  // [noise]
  double noise_std = 0.0;
  // [output]
  std::string output_dir = "out";

  NetworkSpec network_spec(int input_count) const;
};

RunManifest parse_config(std::istream& in, const std::string& origin = "<stream>");
RunManifest load_config(const std::filesystem::path& path);

/// Reduced budgets for quick runs; leaves every other setting alone.
void apply_desk_preset(RunManifest& manifest);

/// Every resolved value, including defaults.
nlohmann::json to_json(const RunManifest& manifest);

}  // namespace gmeql
