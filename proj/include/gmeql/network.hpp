#pragma once

// Layered network of elementary-function nodes.
//
// Layer 0 holds the input variables followed by an optional constant node with
// output 1. Each hidden node has one connection per input slot; a connection
// owns one structure parameter per node of the preceding layer and a single
// regression weight shared by all of those candidate links. The output layer
// is one node with a single connection whose output equals its input.
//
// Structure parameters of all connections are stored in one flat vector, in
// connection order; involvement vectors of an instance use the same layout.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmeql/autodiff.hpp"
#include "gmeql/dataset.hpp"
#include "gmeql/functions.hpp"
#include "gmeql/random.hpp"

namespace gmeql {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NetworkSpec {
  int input_count = 1;
  bool constant_node = true;
  int sum_arity = 3;
  std::vector<std::vector<FunctionKind>> hidden_layers;

  /// One node per active unary kind, two mul nodes, and one node of every
  /// other active non-unary kind, repeated for `hidden_layer_count` layers.
  static NetworkSpec standard(int input_count, std::span<const FunctionKind> active,
                              int hidden_layer_count = 3, int sum_arity = 3);
};

struct NodeId {
  int layer = 0;
  int position = 0;
};

struct Connection {
  NodeId owner;
  int slot = 0;
  int fan_in = 0;        // size of the preceding layer
  std::size_t z_offset = 0;
};

class Network {
 public:
  /// Validates the spec; throws UsageError on an invalid one.
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }

  /// Number of layers including input (0) and output (layer_count() - 1).
  int layer_count() const { return static_cast<int>(layer_sizes_.size()); }
  int output_layer() const { return layer_count() - 1; }
  int layer_size(int layer) const { return layer_sizes_[layer]; }
  int input_width() const { return layer_sizes_[0]; }

  /// Function of a hidden node.
  FunctionKind kind(NodeId node) const;
  int node_arity(NodeId node) const;
  /// Index of the first connection of a hidden or output node.
  std::size_t first_connection(NodeId node) const;

  std::span<const Connection> connections() const { return connections_; }
  const Connection& connection(std::size_t c) const { return connections_[c]; }
  std::size_t connection_count() const { return connections_.size(); }
  std::size_t output_connection() const { return connections_.size() - 1; }
  std::size_t z_size() const { return z_size_; }

  /// Parameter ids used when binding parameters to an autodiff tape.
  autodiff::ParamId z_param(std::size_t z_index) const { return z_index; }
  autodiff::ParamId w_param(std::size_t connection) const { return z_size_ + connection; }

 private:
  NetworkSpec spec_;
  std::vector<int> layer_sizes_;
  std::vector<std::vector<std::size_t>> first_connection_;  // [layer][position]
  std::vector<Connection> connections_;
  std::size_t z_size_ = 0;
};

struct Parameters {
  std::vector<double> z;  // structure parameters, flat
  std::vector<double> w;  // regression weights, one per connection
};

/// Every z and w drawn i.i.d. from N(0, 1).
Parameters init_parameters(const Network& net, Rng& rng);
Parameters init_parameters(const Network& net, std::uint64_t seed);

/// One sampled set of involvement vectors.
struct NetworkInstance {
  std::vector<double> v;               // flat, same layout as Parameters::z
  std::vector<double> gumbel;          // draws behind v; valid where labeled
  std::vector<std::uint8_t> labels;    // one flag per connection
  double mae = -1.0;                   // < 0 until evaluated
  std::string key;
  /// Regression weights the MAE was evaluated with.
  std::shared_ptr<const std::vector<double>> weights;

  std::span<const double> involvement(const Network& net, std::size_t c) const;
  std::size_t labeled_count() const;
};

/// Argmax of each connection's involvement vector, ties to the lowest index.
std::vector<int> harden(const Network& net, const NetworkInstance& instance);
/// Instance whose involvement vectors are the exact one-hot vectors of `choices`.
NetworkInstance one_hot_instance(const Network& net, std::span<const int> choices);

/// Parameters and involvement vectors recorded as tape leaves. Involvement
/// vectors of labeled connections are rebuilt on the tape as
/// softmax((z + g) / temperature) so gradients reach z; the rest are constants.
struct TapeBinding {
  std::vector<autodiff::Var> z;
  std::vector<autodiff::Var> w;
  std::vector<autodiff::Var> v;
};

TapeBinding bind(autodiff::Tape& tape, const Network& net, const Parameters& params,
                 const NetworkInstance& instance, double temperature);

/// Network output for one input vector; x has input_count entries.
autodiff::Var forward(const Network& net, const TapeBinding& binding,
                      std::span<const double> x, autodiff::Tape& tape);
autodiff::Var forward(const Network& net, const Parameters& params,
                      const NetworkInstance& instance, std::span<const double> x,
                      autodiff::Tape& tape, double temperature);

/// Mean absolute error over the whole dataset recorded on one tape.
autodiff::Var mae_on_tape(const Network& net, const TapeBinding& binding,
                          const Dataset& data, autodiff::Tape& tape);

/// Plain double evaluation of the network output.
double predict(const Network& net, std::span<const double> w,
               const NetworkInstance& instance, std::span<const double> x);

/// Mean absolute error with the instance's involvement vectors. Throws
/// UsageError on an empty dataset.
double mae(const Network& net, const Parameters& params, const NetworkInstance& instance,
           const Dataset& data);

}  // namespace gmeql
