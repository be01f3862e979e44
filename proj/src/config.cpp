#include "dfedpgp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "dfedpgp/error.hpp"

namespace dfedpgp {

namespace {

const std::set<std::string>& nullable_keys() {
  static const std::set<std::string> keys{"plan.eta_v"};
  return keys;
}

std::string type_name(const Json& v) {
  if (v.is_number_unsigned()) return "nonnegative integer";
  if (v.is_number()) return "number";
  return v.type_name();
}

void check_type(const Json& current, const Json& incoming, const std::string& key) {
  auto mismatch = [&](const std::string& expected) {
    throw ConfigError("config key '" + key + "' expects " + expected + ", got " +
                      type_name(incoming));
  };
  if (nullable_keys().contains(key)) {
    if (!incoming.is_null() && !incoming.is_number()) mismatch("a number or null");
    return;
  }
  if (current.is_number_unsigned()) {
    const bool ok = incoming.is_number_unsigned() ||
                    (incoming.is_number_integer() && incoming.get<long long>() >= 0);
    if (!ok) mismatch("a nonnegative integer");
  } else if (current.is_number()) {
    if (!incoming.is_number()) mismatch("a number");
  } else if (current.is_string()) {
    if (!incoming.is_string()) mismatch("a string");
  } else if (current.is_boolean()) {
    if (!incoming.is_boolean()) mismatch("a boolean");
  } else if (current.is_array()) {
    if (!incoming.is_array()) mismatch("an array");
  } else if (current.is_object()) {
    if (!incoming.is_object()) mismatch("an object");
  }
}

void merge_strict(Json& base, const Json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError(prefix.empty() ? "config document must be a JSON object"
                                     : "config key '" + prefix + "' expects an object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    Json& dst = base[key];
    if (dst.is_object()) {
      merge_strict(dst, value, path);
    } else {
      check_type(dst, value, path);
      dst = value;
    }
  }
}

template <class Parse>
auto parse_named(const Json& j, const std::string& key, Parse parse) {
  try {
    return parse(j.get<std::string>());
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::size_t get_size(const Json& j, const std::string& key) {
  if (!j.is_number_unsigned() &&
      !(j.is_number_integer() && j.get<long long>() >= 0)) {
    throw ConfigError("config key '" + key + "' expects a nonnegative integer");
  }
  return j.get<std::size_t>();
}

double get_double(const Json& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError("config key '" + key + "' expects a number");
  return j.get<double>();
}

Json defaults() { return to_json(ExperimentConfig{}); }

}  // namespace

Json to_json(const ExperimentConfig& c) {
  Json heterogeneity = Json::array();
  for (const auto& g : c.heterogeneity) {
    heterogeneity.push_back({{"fraction", g.fraction}, {"multiplier", g.multiplier}});
  }
  Json layer_dims = Json::array();
  for (std::size_t d : c.model.mlp.layer_dims) layer_dims.push_back(d);
  Json targets = Json::array();
  for (double t : c.metrics.targets) targets.push_back(t);

  Json doc;
  doc["algorithm"] = to_string(c.algorithm);
  doc["clients"] = c.clients;
  doc["rounds"] = c.rounds;
  doc["seed"] = c.seed;
  doc["lr_decay"] = c.lr_decay;
  doc["threads"] = c.threads;
  doc["per_client_init"] = c.per_client_init;
  doc["model"] = {
      {"kind", c.model.kind == ObjectiveKind::kMlp ? "mlp" : "quadratic"},
      {"layer_dims", layer_dims},
      {"activation", to_string(c.model.mlp.activation)},
      {"split_layer", c.model.mlp.split_layer},
      {"weight_decay", c.model.mlp.weight_decay},
      {"shared_dim", c.model.shared_dim},
      {"personal_dim", c.model.personal_dim},
  };
  doc["plan"] = {
      {"eta_u", c.plan.eta_u},
      {"eta_v", c.plan.eta_v ? Json(*c.plan.eta_v) : Json(nullptr)},
      {"momentum", c.plan.momentum},
      {"batch_size", c.plan.batch_size},
      {"epochs_u", c.plan.epochs_u},
      {"epochs_v", c.plan.epochs_v},
      {"steps_u", c.plan.steps_u},
      {"steps_v", c.plan.steps_v},
  };
  doc["data"] = {
      {"classes", c.data.pool.classes},
      {"dim", c.data.pool.dim},
      {"per_class", c.data.pool.per_class},
      {"radius", c.data.pool.radius},
      {"noise", c.data.pool.noise},
      {"partition", c.data.partition == PartitionKind::kDirichlet ? "dirichlet"
                                                                  : "pathological"},
      {"alpha", c.data.alpha},
      {"classes_per_client", c.data.classes_per_client},
      {"test_fraction", c.data.test_fraction},
  };
  doc["topology"] = {
      {"kind", to_string(c.topology.kind)},
      {"degree", c.topology.degree},
      {"window", c.topology.window},
      {"scheme", to_string(c.topology.scheme)},
      {"file", c.topology.file},
  };
  doc["heterogeneity"] = heterogeneity;
  doc["metrics"] = {{"cadence", c.metrics.cadence}, {"targets", targets}};
  return doc;
}

ExperimentConfig config_from_json(const Json& doc) {
  Json j = defaults();
  merge_strict(j, doc, "");

  ExperimentConfig c;
  c.algorithm = parse_named(j["algorithm"], "algorithm", parse_algorithm);
  c.clients = get_size(j["clients"], "clients");
  c.rounds = get_size(j["rounds"], "rounds");
  c.seed = j["seed"].get<std::uint64_t>();
  c.lr_decay = get_double(j["lr_decay"], "lr_decay");
  c.threads = get_size(j["threads"], "threads");
  c.per_client_init = j["per_client_init"].get<bool>();

  const Json& m = j["model"];
  const std::string kind = m["kind"].get<std::string>();
  if (kind == "mlp") {
    c.model.kind = ObjectiveKind::kMlp;
  } else if (kind == "quadratic") {
    c.model.kind = ObjectiveKind::kQuadratic;
  } else {
    throw ConfigError("config key 'model.kind': expected mlp or quadratic, got '" +
                      kind + "'");
  }
  c.model.mlp.layer_dims.clear();
  for (const auto& d : m["layer_dims"]) {
    c.model.mlp.layer_dims.push_back(get_size(d, "model.layer_dims"));
  }
  c.model.mlp.activation = parse_named(m["activation"], "model.activation", parse_activation);
  c.model.mlp.split_layer = get_size(m["split_layer"], "model.split_layer");
  c.model.mlp.weight_decay = get_double(m["weight_decay"], "model.weight_decay");
  c.model.shared_dim = get_size(m["shared_dim"], "model.shared_dim");
  c.model.personal_dim = get_size(m["personal_dim"], "model.personal_dim");

  const Json& p = j["plan"];
  c.plan.eta_u = get_double(p["eta_u"], "plan.eta_u");
  if (!p["eta_v"].is_null()) c.plan.eta_v = get_double(p["eta_v"], "plan.eta_v");
  c.plan.momentum = get_double(p["momentum"], "plan.momentum");
  c.plan.batch_size = get_size(p["batch_size"], "plan.batch_size");
  c.plan.epochs_u = get_size(p["epochs_u"], "plan.epochs_u");
  c.plan.epochs_v = get_size(p["epochs_v"], "plan.epochs_v");
  c.plan.steps_u = get_size(p["steps_u"], "plan.steps_u");
  c.plan.steps_v = get_size(p["steps_v"], "plan.steps_v");

  const Json& d = j["data"];
  c.data.pool.classes = get_size(d["classes"], "data.classes");
  c.data.pool.dim = get_size(d["dim"], "data.dim");
  c.data.pool.per_class = get_size(d["per_class"], "data.per_class");
  c.data.pool.radius = get_double(d["radius"], "data.radius");
  c.data.pool.noise = get_double(d["noise"], "data.noise");
  const std::string part = d["partition"].get<std::string>();
  if (part == "dirichlet") {
    c.data.partition = PartitionKind::kDirichlet;
  } else if (part == "pathological") {
    c.data.partition = PartitionKind::kPathological;
  } else {
    throw ConfigError("config key 'data.partition': expected dirichlet or pathological, got '" +
                      part + "'");
  }
  c.data.alpha = get_double(d["alpha"], "data.alpha");
  c.data.classes_per_client = get_size(d["classes_per_client"], "data.classes_per_client");
  c.data.test_fraction = get_double(d["test_fraction"], "data.test_fraction");

  const Json& t = j["topology"];
  c.topology.kind = parse_named(t["kind"], "topology.kind", parse_topology_kind);
  c.topology.degree = get_size(t["degree"], "topology.degree");
  c.topology.window = get_size(t["window"], "topology.window");
  c.topology.scheme = parse_named(t["scheme"], "topology.scheme", parse_mixing_scheme);
  c.topology.file = t["file"].get<std::string>();

  c.heterogeneity.clear();
  for (const auto& g : j["heterogeneity"]) {
    if (!g.is_object()) throw ConfigError("config key 'heterogeneity' expects objects");
    HeterogeneityGroup group;
    for (const auto& [key, value] : g.items()) {
      if (key == "fraction") {
        group.fraction = get_double(value, "heterogeneity.fraction");
      } else if (key == "multiplier") {
        group.multiplier = get_size(value, "heterogeneity.multiplier");
      } else {
        throw ConfigError("unknown config key 'heterogeneity." + key + "'");
      }
    }
    c.heterogeneity.push_back(group);
  }

  const Json& mt = j["metrics"];
  c.metrics.cadence = get_size(mt["cadence"], "metrics.cadence");
  c.metrics.targets.clear();
  for (const auto& x : mt["targets"]) {
    c.metrics.targets.push_back(get_double(x, "metrics.targets"));
  }
  return c;
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  Json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t k = 0; k < path.size(); ++k) {
    if (!node->is_object() || !node->contains(path[k])) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    node = &(*node)[path[k]];
  }
  if (node->is_object()) {
    throw ConfigError("config key '" + key + "' is a section, not a value");
  }
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  check_type(*node, value, key);
  *node = std::move(value);
}

ExperimentConfig load_config(const std::string& path,
                             std::span<const std::string> overrides) {
  Json doc = defaults();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    Json user = Json::parse(in, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config file '" + path + "' is not valid JSON");
    merge_strict(doc, user, "");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  ExperimentConfig config = config_from_json(doc);
  config.validate();
  return config;
}

}  // namespace dfedpgp
