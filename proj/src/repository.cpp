#include "gmeql/repository.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace gmeql {

EliteRepository::EliteRepository(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw UsageError("repository capacity must be positive");
  cumulative_.resize(capacity_);
  double total = 0.0;
  for (std::size_t i = 0; i < capacity_; ++i) {
    total += std::pow(static_cast<double>(i + 1), -kPowerLawExponent);
    cumulative_[i] = total;
  }
}

bool EliteRepository::insert(NetworkInstance instance, double mae, std::string key) {
  instance.mae = mae;
  instance.key = std::move(key);
  return insert(std::move(instance));
}

bool EliteRepository::insert(NetworkInstance instance) {
  if (std::isnan(instance.mae) || instance.mae < 0.0) {
    throw UsageError("repository: MAE must be a non-negative number");
  }
  if (!std::isfinite(instance.mae)) return false;

  if (keys_.count(instance.key)) {
    const auto it = std::find_if(entries_.begin(), entries_.end(),
                                 [&](const NetworkInstance& e) { return e.key == instance.key; });
    if (it->mae <= instance.mae) return false;
    entries_.erase(it);
    keys_.erase(instance.key);
  } else if (entries_.size() == capacity_ && entries_.back().mae <= instance.mae) {
    return false;
  }

  const auto pos = std::upper_bound(
      entries_.begin(), entries_.end(), instance.mae,
      [](double m, const NetworkInstance& e) { return m < e.mae; });
  keys_.insert(instance.key);
  entries_.insert(pos, std::move(instance));
  if (entries_.size() > capacity_) {
    keys_.erase(entries_.back().key);
    entries_.pop_back();
  }
  return true;
}

std::size_t EliteRepository::select_rank(Rng& rng) const {
  if (entries_.empty()) throw UsageError("repository: cannot select from an empty archive");
  const double total = cumulative_[entries_.size() - 1];
  std::uniform_real_distribution<double> uniform(0.0, total);
  const double u = uniform(rng);
  const auto end = cumulative_.begin() + static_cast<std::ptrdiff_t>(entries_.size());
  const auto it = std::upper_bound(cumulative_.begin(), end, u);
  return std::min(static_cast<std::size_t>(it - cumulative_.begin()), entries_.size() - 1);
}

const NetworkInstance& EliteRepository::select_elite(Rng& rng) const {
  return entries_[select_rank(rng)];
}

const NetworkInstance& EliteRepository::best() const {
  if (entries_.empty()) throw UsageError("repository: empty");
  return entries_.front();
}

void EliteRepository::export_jsonl(std::ostream& out, const Network& net) const {
  for (std::size_t rank = 0; rank < entries_.size(); ++rank) {
    const NetworkInstance& e = entries_[rank];
    nlohmann::json v = nlohmann::json::array();
    for (std::size_t c = 0; c < net.connection_count(); ++c) {
      const auto inv = e.involvement(net, c);
      v.push_back(std::vector<double>(inv.begin(), inv.end()));
    }
    nlohmann::json line = {{"rank", rank + 1}, {"key", e.key}, {"mae", e.mae},
                           {"labels", e.labels}, {"v", std::move(v)}};
    if (e.weights) line["w"] = *e.weights;
    out << line.dump() << '\n';
  }
}

NetworkInstance fresh_instance(const Network& net, const Parameters& params,
                               gumbel::Temperature lambda, Rng& rng) {
  NetworkInstance inst;
  inst.v.resize(net.z_size());
  inst.gumbel.resize(net.z_size());
  inst.labels.assign(net.connection_count(), 1);
  for (const Connection& conn : net.connections()) {
    const auto n = static_cast<std::size_t>(conn.fan_in);
    gumbel::sample_involvement({params.z.data() + conn.z_offset, n}, lambda, rng,
                               {inst.v.data() + conn.z_offset, n},
                               {inst.gumbel.data() + conn.z_offset, n});
  }
  return inst;
}

NetworkInstance guided_resample(const Network& net, const Parameters& params,
                                const NetworkInstance& elite, double fraction,
                                gumbel::Temperature lambda, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw UsageError("guided_resample: fraction must be in (0, 1]");
  }
  const std::size_t count = net.connection_count();
  const auto chosen = std::min(
      count, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(count) - 1e-9)));

  NetworkInstance inst;
  inst.v = elite.v;
  inst.gumbel.assign(net.z_size(), 0.0);
  inst.labels.assign(count, 0);

  // Partial Fisher-Yates: the first `chosen` slots form a uniform subset.
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < chosen; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, count - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(chosen));
  for (std::size_t i = 0; i < chosen; ++i) {
    const std::size_t c = order[i];
    const Connection& conn = net.connection(c);
    const auto n = static_cast<std::size_t>(conn.fan_in);
    inst.labels[c] = 1;
    gumbel::sample_involvement({params.z.data() + conn.z_offset, n}, lambda, rng,
                               {inst.v.data() + conn.z_offset, n},
                               {inst.gumbel.data() + conn.z_offset, n});
  }
  return inst;
}

}  // namespace gmeql
