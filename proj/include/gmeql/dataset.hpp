#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gmeql {

struct Provenance {
  std::string benchmark;
  std::uint64_t seed = 0;
  double noise_std = 0.0;
  std::string split;  // "train", "test" or empty for external data
};

/// R input/target pairs. Inputs are stored row-major, one row per example.
struct Dataset {
  int dims = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
  Provenance provenance;

  std::size_t rows() const { return targets.size(); }
  std::span<const double> row(std::size_t i) const {
    return {inputs.data() + i * static_cast<std::size_t>(dims),
            static_cast<std::size_t>(dims)};
  }
};

}  // namespace gmeql
