#pragma once

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "gmeql/gumbel.hpp"
#include "gmeql/network.hpp"
#include "gmeql/random.hpp"

namespace gmeql {

inline constexpr double kPowerLawExponent = 1.5;

/// Fixed-capacity archive of the most accurate sampled instances, sorted by
/// ascending MAE, with at most one instance per expression key. Entries with
/// equal MAE keep insertion order.
class EliteRepository {
 public:
  explicit EliteRepository(std::size_t capacity = 400);

  /// Inserts `instance` using its `mae` and `key` fields. A duplicate key keeps
  /// whichever entry has the lower MAE; a full archive evicts its worst entry.
  /// Returns whether the contents changed. Throws UsageError on a NaN or
  /// negative MAE.
  bool insert(NetworkInstance instance);
  bool insert(NetworkInstance instance, double mae, std::string key);

  /// Entry at 1-based rank i with probability proportional to i^-1.5. Throws
  /// UsageError when empty.
  const NetworkInstance& select_elite(Rng& rng) const;
  std::size_t select_rank(Rng& rng) const;

  std::span<const NetworkInstance> entries() const { return entries_; }
  const NetworkInstance& best() const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t capacity() const { return capacity_; }
  bool contains_key(const std::string& key) const { return keys_.count(key) != 0; }

  /// One JSON object per line: rank, key, mae, labels and involvement vectors.
  void export_jsonl(std::ostream& out, const Network& net) const;

 private:
  std::size_t capacity_;
  std::vector<NetworkInstance> entries_;
  std::unordered_set<std::string> keys_;
  std::vector<double> cumulative_;  // cumulative power-law weights by rank
};

/// Fresh instance: every connection sampled under the current z and labeled.
NetworkInstance fresh_instance(const Network& net, const Parameters& params,
                               gumbel::Temperature lambda, Rng& rng);

/// Copy of `elite` in which a uniform random subset of ceil(fraction * C)
/// connections is re-sampled under the current z and labeled; every other
/// involvement vector is inherited unchanged and unlabeled.
NetworkInstance guided_resample(const Network& net, const Parameters& params,
                                const NetworkInstance& elite, double fraction,
                                gumbel::Temperature lambda, Rng& rng);

}  // namespace gmeql
