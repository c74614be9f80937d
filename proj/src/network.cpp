#include "gmeql/network.hpp"

#include <algorithm>
#include <cmath>

namespace gmeql {

NetworkSpec NetworkSpec::standard(int input_count, std::span<const FunctionKind> active,
                                  int hidden_layer_count, int sum_arity) {
  std::vector<FunctionKind> layer;
  for (FunctionKind kind : kAllFunctionKinds) {
    if (std::find(active.begin(), active.end(), kind) == active.end()) continue;
    layer.push_back(kind);
    if (kind == FunctionKind::mul) layer.push_back(kind);
  }
  NetworkSpec spec;
  spec.input_count = input_count;
  spec.sum_arity = sum_arity;
  spec.hidden_layers.assign(static_cast<std::size_t>(hidden_layer_count), layer);
  return spec;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  if (spec_.input_count < 1) throw UsageError("network: input_count must be >= 1");
  if (spec_.sum_arity < 2) throw UsageError("network: sum_arity must be >= 2");
  if (spec_.hidden_layers.empty()) throw UsageError("network: at least one hidden layer");
  for (const auto& layer : spec_.hidden_layers) {
    if (layer.empty()) throw UsageError("network: hidden layers must be non-empty");
  }

  layer_sizes_.push_back(spec_.input_count + (spec_.constant_node ? 1 : 0));
  for (const auto& layer : spec_.hidden_layers) {
    layer_sizes_.push_back(static_cast<int>(layer.size()));
  }
  layer_sizes_.push_back(1);

  first_connection_.resize(layer_sizes_.size());
  for (int k = 1; k < layer_count(); ++k) {
    const int fan_in = layer_sizes_[k - 1];
    for (int i = 0; i < layer_sizes_[k]; ++i) {
      const NodeId node{k, i};
      first_connection_[k].push_back(connections_.size());
      const int slots = k == output_layer() ? 1 : node_arity(node);
      for (int j = 0; j < slots; ++j) {
        connections_.push_back({node, j, fan_in, z_size_});
        z_size_ += static_cast<std::size_t>(fan_in);
      }
    }
  }
}

FunctionKind Network::kind(NodeId node) const {
  if (node.layer < 1 || node.layer >= output_layer()) {
    throw UsageError("network: kind() is defined for hidden nodes only");
  }
  return spec_.hidden_layers[node.layer - 1][node.position];
}

int Network::node_arity(NodeId node) const {
  if (node.layer == output_layer()) return 1;
  return arity(kind(node), spec_.sum_arity);
}

std::size_t Network::first_connection(NodeId node) const {
  return first_connection_[node.layer][node.position];
}

Parameters init_parameters(const Network& net, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Parameters p;
  p.z.resize(net.z_size());
  p.w.resize(net.connection_count());
  for (double& z : p.z) z = normal(rng);
  for (double& w : p.w) w = normal(rng);
  return p;
}

Parameters init_parameters(const Network& net, std::uint64_t seed) {
  Rng rng(seed);
  return init_parameters(net, rng);
}

std::span<const double> NetworkInstance::involvement(const Network& net,
                                                     std::size_t c) const {
  const Connection& conn = net.connection(c);
  return {v.data() + conn.z_offset, static_cast<std::size_t>(conn.fan_in)};
}

std::size_t NetworkInstance::labeled_count() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::vector<int> harden(const Network& net, const NetworkInstance& instance) {
  std::vector<int> choices(net.connection_count());
  for (std::size_t c = 0; c < choices.size(); ++c) {
    const auto v = instance.involvement(net, c);
    choices[c] = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  }
  return choices;
}

NetworkInstance one_hot_instance(const Network& net, std::span<const int> choices) {
  NetworkInstance inst;
  inst.v.assign(net.z_size(), 0.0);
  inst.gumbel.assign(net.z_size(), 0.0);
  inst.labels.assign(net.connection_count(), 0);
  for (std::size_t c = 0; c < net.connection_count(); ++c) {
    const Connection& conn = net.connection(c);
    if (choices[c] < 0 || choices[c] >= conn.fan_in) {
      throw UsageError("one_hot_instance: choice out of range");
    }
    inst.v[conn.z_offset + static_cast<std::size_t>(choices[c])] = 1.0;
  }
  return inst;
}

TapeBinding bind(autodiff::Tape& tape, const Network& net, const Parameters& params,
                 const NetworkInstance& instance, double temperature) {
  if (instance.v.size() != net.z_size()) {
    throw autodiff::StructuralError("bind: instance does not match network");
  }
  TapeBinding b;
  b.z.reserve(net.z_size());
  for (std::size_t i = 0; i < net.z_size(); ++i) {
    b.z.push_back(tape.parameter(net.z_param(i), params.z[i]));
  }
  for (std::size_t c = 0; c < net.connection_count(); ++c) {
    b.w.push_back(tape.parameter(net.w_param(c), params.w[c]));
  }
  b.v.resize(net.z_size());
  const autodiff::Var inv_temp = tape.constant(1.0 / temperature);
  for (std::size_t c = 0; c < net.connection_count(); ++c) {
    const Connection& conn = net.connection(c);
    const bool labeled = !instance.labels.empty() && instance.labels[c] != 0;
    if (!labeled) {
      for (int l = 0; l < conn.fan_in; ++l) {
        b.v[conn.z_offset + l] = tape.constant(instance.v[conn.z_offset + l]);
      }
      continue;
    }
    std::vector<autodiff::Var> logits;
    for (int l = 0; l < conn.fan_in; ++l) {
      const std::size_t i = conn.z_offset + static_cast<std::size_t>(l);
      logits.push_back((b.z[i] + tape.constant(instance.gumbel[i])) * inv_temp);
    }
    for (int l = 0; l < conn.fan_in; ++l) {
      b.v[conn.z_offset + l] = autodiff::softmax_component(logits, static_cast<std::size_t>(l));
    }
  }
  return b;
}

autodiff::Var forward(const Network& net, const TapeBinding& binding,
                      std::span<const double> x, autodiff::Tape& tape) {
  if (static_cast<int>(x.size()) != net.spec().input_count) {
    throw autodiff::StructuralError("forward: input size mismatch");
  }
  std::vector<autodiff::Var> prev;
  for (double xi : x) prev.push_back(tape.constant(xi));
  if (net.spec().constant_node) prev.push_back(tape.constant(1.0));

  const auto connection_input = [&](std::size_t c) {
    const Connection& conn = net.connection(c);
    std::vector<autodiff::Var> terms;
    for (int l = 0; l < conn.fan_in; ++l) {
      terms.push_back(prev[l] * binding.v[conn.z_offset + l]);
    }
    return binding.w[c] * autodiff::sum(terms);
  };

  for (int k = 1; k < net.output_layer(); ++k) {
    std::vector<autodiff::Var> outputs;
    for (int i = 0; i < net.layer_size(k); ++i) {
      const NodeId node{k, i};
      const std::size_t first = net.first_connection(node);
      std::vector<autodiff::Var> inputs;
      for (int j = 0; j < net.node_arity(node); ++j) {
        inputs.push_back(connection_input(first + static_cast<std::size_t>(j)));
      }
      outputs.push_back(apply_function(net.kind(node), inputs));
    }
    prev = std::move(outputs);
  }
  return connection_input(net.output_connection());
}

autodiff::Var forward(const Network& net, const Parameters& params,
                      const NetworkInstance& instance, std::span<const double> x,
                      autodiff::Tape& tape, double temperature) {
  const TapeBinding binding = bind(tape, net, params, instance, temperature);
  return forward(net, binding, x, tape);
}

autodiff::Var mae_on_tape(const Network& net, const TapeBinding& binding,
                          const Dataset& data, autodiff::Tape& tape) {
  if (data.rows() == 0) throw UsageError("mae: empty dataset");
  std::vector<autodiff::Var> errors;
  errors.reserve(data.rows());
  for (std::size_t r = 0; r < data.rows(); ++r) {
    const autodiff::Var y = forward(net, binding, data.row(r), tape);
    errors.push_back(autodiff::abs(tape.constant(data.targets[r]) - y));
  }
  return autodiff::sum(errors) * tape.constant(1.0 / static_cast<double>(data.rows()));
}

double predict(const Network& net, std::span<const double> w,
               const NetworkInstance& instance, std::span<const double> x) {
  std::vector<double> prev(x.begin(), x.end());
  if (net.spec().constant_node) prev.push_back(1.0);

  const auto connection_input = [&](std::size_t c) {
    const Connection& conn = net.connection(c);
    double s = 0.0;
    for (int l = 0; l < conn.fan_in; ++l) s += prev[l] * instance.v[conn.z_offset + l];
    return w[c] * s;
  };

  for (int k = 1; k < net.output_layer(); ++k) {
    std::vector<double> outputs;
    for (int i = 0; i < net.layer_size(k); ++i) {
      const NodeId node{k, i};
      const std::size_t first = net.first_connection(node);
      double inputs[8];
      const int n = net.node_arity(node);
      std::vector<double> big;
      double* in = inputs;
      if (n > 8) {
        big.resize(static_cast<std::size_t>(n));
        in = big.data();
      }
      for (int j = 0; j < n; ++j) in[j] = connection_input(first + static_cast<std::size_t>(j));
      outputs.push_back(apply_function(net.kind(node), {in, static_cast<std::size_t>(n)}));
    }
    prev = std::move(outputs);
  }
  return connection_input(net.output_connection());
}

double mae(const Network& net, const Parameters& params, const NetworkInstance& instance,
           const Dataset& data) {
  if (data.rows() == 0) throw UsageError("mae: empty dataset");
  double total = 0.0;
  for (std::size_t r = 0; r < data.rows(); ++r) {
    total += std::abs(data.targets[r] - predict(net, params.w, instance, data.row(r)));
  }
  return total / static_cast<double>(data.rows());
}

}  // namespace gmeql
