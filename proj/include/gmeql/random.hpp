#pragma once

#include <cstdint>
#include <random>

namespace gmeql {

/// All stochastic components draw from an explicitly passed engine.
using Rng = std::mt19937_64;

}  // namespace gmeql
