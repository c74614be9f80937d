#include "gmeql/config.hpp"

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace gmeql {

namespace pt = boost::property_tree;

ConfigError::ConfigError(std::string field, const std::string& message)
    : std::runtime_error(field + ": " + message), field_(std::move(field)) {}

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"network", {"hidden_layers", "sum_arity", "constant_node", "functions", "layers"}},
      {"train",
       {"n", "m", "p", "q", "r", "lr", "temperature", "capacity", "resample_fraction",
        "offline_rule", "seed", "stage1", "guided_sampling", "offline", "final_candidates",
        "refine_iterations",
        "threads"}},
      {"benchmark", {"id", "data_seed"}},
      {"noise", {"std"}},
      {"output", {"dir"}},
  };
  return keys;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<FunctionKind> parse_function_list(const std::string& field, const std::string& text) {
  std::vector<FunctionKind> kinds;
  std::stringstream list(text);
  std::string item;
  while (std::getline(list, item, ',')) {
    item = trim(item);
    const auto kind = parse_function_kind(item);
    if (!kind) throw ConfigError(field, "unknown function '" + item + "'");
    kinds.push_back(*kind);
  }
  if (kinds.empty()) throw ConfigError(field, "empty function set");
  return kinds;
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  template <typename T>
  void get(const std::string& field, T& out) const {
    const auto node = tree_.get_optional<std::string>(pt::ptree::path_type(field, '.'));
    if (!node) return;
    const std::string text = trim(*node);
    std::istringstream in(text);
    T value{};
    in >> value;
    if (text.empty() || in.fail() || !in.eof()) {
      throw ConfigError(field, "cannot parse '" + text + "'");
    }
    out = value;
  }

  void get_bool(const std::string& field, bool& out) const {
    const auto node = tree_.get_optional<std::string>(pt::ptree::path_type(field, '.'));
    if (!node) return;
    const std::string text = trim(*node);
    if (text == "true" || text == "1" || text == "yes" || text == "on") {
      out = true;
    } else if (text == "false" || text == "0" || text == "no" || text == "off") {
      out = false;
    } else {
      throw ConfigError(field, "expected a boolean, got '" + text + "'");
    }
  }

  std::optional<std::string> get_string(const std::string& field) const {
    const auto node = tree_.get_optional<std::string>(pt::ptree::path_type(field, '.'));
    if (!node) return std::nullopt;
    return trim(*node);
  }

 private:
  const pt::ptree& tree_;
};

}  // namespace

NetworkSpec RunManifest::network_spec(int input_count) const {
  NetworkSpec spec = NetworkSpec::standard(input_count, functions, hidden_layers, sum_arity);
  if (!layers.empty()) spec.hidden_layers = layers;
  spec.constant_node = constant_node;
  return spec;
}

RunManifest parse_config(std::istream& in, const std::string& origin) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("file", origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  for (const auto& [section, body] : tree) {
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) throw ConfigError(section, "unknown section");
    if (!body.data().empty() && body.empty()) throw ConfigError(section, "key outside a section");
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) throw ConfigError(section + "." + key, "unknown key");
    }
  }

  RunManifest m;
  m.config_path = origin;
  const Reader r(tree);

  r.get("network.hidden_layers", m.hidden_layers);
  r.get("network.sum_arity", m.sum_arity);
  r.get_bool("network.constant_node", m.constant_node);
  if (const auto text = r.get_string("network.functions")) {
    m.functions = parse_function_list("network.functions", *text);
  }
  if (const auto text = r.get_string("network.layers")) {
    std::stringstream layers(*text);
    std::string layer;
    while (std::getline(layers, layer, '/')) {
      m.layers.push_back(parse_function_list("network.layers", layer));
    }
    if (m.layers.empty()) throw ConfigError("network.layers", "no layers given");
  }
  if (m.hidden_layers < 1) throw ConfigError("network.hidden_layers", "must be >= 1");
  if (m.sum_arity < 2) throw ConfigError("network.sum_arity", "must be >= 2");

  TrainConfig& t = m.train;
  r.get("train.n", t.rounds);
  r.get("train.m", t.stage1_iterations);
  r.get("train.p", t.batch);
  r.get("train.q", t.stage2_iterations);
  r.get("train.r", t.offline_batch);
  r.get("train.lr", t.learning_rate);
  r.get("train.temperature", t.temperature);
  r.get("train.capacity", t.capacity);
  r.get("train.resample_fraction", t.resample_fraction);
  if (const auto rule = r.get_string("train.offline_rule")) {
    const auto parsed = parse_offline_rule(*rule);
    if (!parsed) throw ConfigError("train.offline_rule", "expected score or jprime, got '" + *rule + "'");
    t.offline_rule = *parsed;
  }
  r.get("train.seed", t.seed);
  r.get_bool("train.stage1", t.stage1);
  r.get_bool("train.guided_sampling", t.guided_sampling);
  r.get_bool("train.offline", t.offline);
  r.get("train.final_candidates", t.final_candidates);
  r.get("train.refine_iterations", t.refine_iterations);
  r.get("train.threads", t.threads);
  try {
    t.validate();
  } catch (const UsageError& e) {
    const std::string what = e.what();
    throw ConfigError(what.substr(0, what.find(':')), what.substr(what.find(':') + 2));
  }

  const auto id = r.get_string("benchmark.id");
  if (!id || id->empty()) throw ConfigError("benchmark.id", "missing benchmark id");
  m.benchmark = *id;
  r.get("benchmark.data_seed", m.data_seed);

  r.get("noise.std", m.noise_std);
  if (!(m.noise_std >= 0.0)) throw ConfigError("noise.std", "must be >= 0");

  if (const auto dir = r.get_string("output.dir")) m.output_dir = *dir;
  return m;
}

RunManifest load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("file", "cannot open " + path.string());
  return parse_config(in, path.string());
}

void apply_desk_preset(RunManifest& manifest) {
  const TrainConfig desk = TrainConfig::desk();
  TrainConfig& t = manifest.train;
  t.rounds = desk.rounds;
  t.stage1_iterations = desk.stage1_iterations;
  t.batch = desk.batch;
  t.stage2_iterations = desk.stage2_iterations;
  t.offline_batch = desk.offline_batch;
  t.capacity = desk.capacity;
}

nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json functions = nlohmann::json::array();
  for (FunctionKind k : m.functions) functions.push_back(std::string(function_name(k)));
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : m.layers) {
    nlohmann::json names = nlohmann::json::array();
    for (FunctionKind k : layer) names.push_back(std::string(function_name(k)));
    layers.push_back(names);
  }
  const TrainConfig& t = m.train;
  return {
      {"config_path", m.config_path},
      {"network",
       {{"hidden_layers", m.hidden_layers},
        {"sum_arity", m.sum_arity},
        {"constant_node", m.constant_node},
        {"functions", functions},
        {"layers", layers}}},
      {"train",
       {{"n", t.rounds},
        {"m", t.stage1_iterations},
        {"p", t.batch},
        {"q", t.stage2_iterations},
        {"r", t.offline_batch},
        {"lr", t.learning_rate},
        {"temperature", t.temperature},
        {"capacity", t.capacity},
        {"resample_fraction", t.resample_fraction},
        {"offline_rule", std::string(offline_rule_name(t.offline_rule))},
        {"seed", t.seed},
        {"stage1", t.stage1},
        {"guided_sampling", t.guided_sampling},
        {"offline", t.offline},
        {"final_candidates", t.final_candidates},
        {"refine_iterations", t.refine_iterations},
        {"threads", t.threads}}},
      {"benchmark", {{"id", m.benchmark}, {"data_seed", m.data_seed}}},
      {"noise", {{"std", m.noise_std}}},
      {"output", {{"dir", m.output_dir}}},
  };
}

}  // namespace gmeql
