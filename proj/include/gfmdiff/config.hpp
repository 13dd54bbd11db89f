#pragma once

// Run configuration: a JSON document where every key has a default and unknown
// keys are rejected. "section.key=value" overrides patch the document before
// it is decoded.

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gfmdiff/bonds.hpp"
#include "gfmdiff/checkpoint.hpp"
#include "gfmdiff/dataio.hpp"
#include "gfmdiff/diffusion.hpp"
#include "gfmdiff/dtn.hpp"
#include "json.hpp"

namespace gfm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline GfWeightMode parse_gf_weight(const std::string& s) {
  if (s == "sqrt_alpha_bar") return GfWeightMode::kSqrtAlphaBar;
  if (s == "alpha") return GfWeightMode::kAlpha;
  throw std::invalid_argument("unknown gf weight '" + s + "' (expected sqrt_alpha_bar or alpha)");
}
inline std::string to_string(GfWeightMode m) { return m == GfWeightMode::kSqrtAlphaBar ? "sqrt_alpha_bar" : "alpha"; }

inline ValencyMode parse_valency_mode(const std::string& s) {
  if (s == "order_weighted") return ValencyMode::kOrderWeighted;
  if (s == "bond_count") return ValencyMode::kBondCount;
  throw std::invalid_argument("unknown valency mode '" + s + "' (expected order_weighted or bond_count)");
}
inline std::string to_string(ValencyMode m) { return m == ValencyMode::kOrderWeighted ? "order_weighted" : "bond_count"; }

struct ModelSection {
  std::size_t n_layers = 5;
  std::size_t d_model = 256;
  std::size_t n_heads = 8;
  std::size_t d_ff = 0;
  std::size_t d_trip = 0;
  double dropout = 0.1;
  std::size_t rbf_bases = 32;
  double rbf_r_max = 12.0;
  std::size_t time_dim = 16;
  double triplet_cutoff = 0.0;
  std::string precision = "float32";
};

struct ScheduleSection {
  ScheduleKind kind = ScheduleKind::kCosine;
  std::size_t T = 1000;
  PosteriorVariance variance = PosteriorVariance::kStandard;
};

struct TrainingSection {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
  double ema_decay = 0.999;
  std::size_t checkpoint_every = 10;
  double max_minutes = 0.0;  // 0 = no wall-clock limit
  std::string lr_decay = "constant";  // constant | cosine (to zero at the last step)
};

struct DataSection {
  std::vector<std::string> paths;
  std::string toy;  // diatomics | chains | templated-small-organics; empty when paths are used
  std::size_t toy_count = 200;
  std::uint64_t toy_seed = 0;
  std::vector<std::string> elements{"H", "C", "N", "O", "F"};
  std::string property;  // conditioning target; empty = unconditional
  std::string bond_table;  // empty = built-in table
};

struct RunConfig {
  ModelSection model;
  ScheduleSection schedule;
  LossOptions loss;
  TrainingSection training;
  DataSection data;
  std::string output_dir = "run";

  ElementSet element_set() const { return ElementSet(data.elements); }

  BondTable bond_table() const {
    return data.bond_table.empty() ? BondTable::standard(element_set()) : BondTable::load(data.bond_table, element_set());
  }

  FeatureScaling scaling() const { return FeatureScaling::for_elements(element_set()); }

  DtnConfig dtn() const {
    DtnConfig c;
    c.n_layers = model.n_layers;
    c.d_model = model.d_model;
    c.n_heads = model.n_heads;
    c.d_ff = model.d_ff;
    c.d_trip = model.d_trip;
    c.dropout = model.dropout;
    c.rbf.n_bases = model.rbf_bases;
    c.rbf.r_max = model.rbf_r_max;
    c.time_dim = model.time_dim;
    c.triplet_cutoff = model.triplet_cutoff;
    const auto s = scaling();
    c.nf = s.nf;
    c.max_valency = static_cast<std::size_t>(s.max_valency);
    c.conditioning_dim = data.property.empty() ? 0 : 1;
    return c;
  }

  NoiseSchedule noise_schedule() const { return build_schedule(schedule.kind, schedule.T, schedule.variance); }

  void validate() const {
    try {
      element_set();
      dtn().validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (model.precision != "float32" && model.precision != "float64") {
      throw ConfigError("model.precision must be float32 or float64");
    }
    if (schedule.T < 2) throw ConfigError("schedule.T must be at least 2");
    if (!(loss.lambda >= 0.0)) throw ConfigError("loss.lambda must be non-negative");
    if (!(loss.type_temperature > 0.0)) throw ConfigError("loss.type_temperature must be positive");
    if (training.batch_size < 1) throw ConfigError("training.batch_size must be at least 1");
    if (!(training.learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");
    if (!(training.ema_decay >= 0.0 && training.ema_decay < 1.0)) throw ConfigError("training.ema_decay must be in [0, 1)");
    if (training.lr_decay != "constant" && training.lr_decay != "cosine") {
      throw ConfigError("training.lr_decay must be constant or cosine");
    }
    if (data.paths.empty() == data.toy.empty()) throw ConfigError("set exactly one of data.paths and data.toy");
    if (!data.toy.empty()) {
      try {
        parse_toy_kind(data.toy);
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
      if (data.toy_count < 1) throw ConfigError("data.toy_count must be at least 1");
    }
  }
};

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, const std::string& section, const std::set<std::string>& keys) {
  if (!j.is_object()) throw ConfigError((section.empty() ? std::string("config") : section) + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!keys.count(k)) throw ConfigError("unknown config key '" + (section.empty() ? k : section + "." + k) + "'");
  }
}

template <class V>
void read(const json& j, const char* key, V& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

template <class E, class Parse>
void read_enum(const json& j, const char* key, E& out, const std::string& section, Parse parse) {
  if (!j.contains(key)) return;
  std::string s;
  read(j, key, s, section);
  try {
    out = parse(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["model"] = {{"n_layers", c.model.n_layers},   {"d_model", c.model.d_model},
                {"n_heads", c.model.n_heads},     {"d_ff", c.model.d_ff},
                {"d_trip", c.model.d_trip},       {"dropout", c.model.dropout},
                {"rbf_bases", c.model.rbf_bases}, {"rbf_r_max", c.model.rbf_r_max},
                {"time_dim", c.model.time_dim},   {"triplet_cutoff", c.model.triplet_cutoff},
                {"precision", c.model.precision}};
  j["schedule"] = {{"kind", to_string(c.schedule.kind)},
                   {"T", c.schedule.T},
                   {"posterior_variance", to_string(c.schedule.variance)}};
  j["loss"] = {{"lambda", c.loss.lambda},
               {"gf_weight", to_string(c.loss.weight_mode)},
               {"valency_mode", to_string(c.loss.valency_mode)},
               {"bond_order_rule", to_string(c.loss.bond_rule)},
               {"type_temperature", c.loss.type_temperature}};
  j["training"] = {{"epochs", c.training.epochs},
                   {"batch_size", c.training.batch_size},
                   {"learning_rate", c.training.learning_rate},
                   {"seed", c.training.seed},
                   {"grad_clip", c.training.grad_clip},
                   {"ema_decay", c.training.ema_decay},
                   {"checkpoint_every", c.training.checkpoint_every},
                   {"max_minutes", c.training.max_minutes},
                   {"lr_decay", c.training.lr_decay}};
  j["data"] = {{"paths", c.data.paths},       {"toy", c.data.toy},
               {"toy_count", c.data.toy_count}, {"toy_seed", c.data.toy_seed},
               {"elements", c.data.elements}, {"property", c.data.property},
               {"bond_table", c.data.bond_table}};
  j["output_dir"] = c.output_dir;
  return j;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::read;
  using detail::read_enum;
  RunConfig c;
  detail::reject_unknown(j, "", {"model", "schedule", "loss", "training", "data", "output_dir"});
  if (j.contains("model")) {
    const auto& m = j["model"];
    detail::reject_unknown(m, "model",
                           {"n_layers", "d_model", "n_heads", "d_ff", "d_trip", "dropout", "rbf_bases", "rbf_r_max",
                            "time_dim", "triplet_cutoff", "precision"});
    read(m, "n_layers", c.model.n_layers, "model");
    read(m, "d_model", c.model.d_model, "model");
    read(m, "n_heads", c.model.n_heads, "model");
    read(m, "d_ff", c.model.d_ff, "model");
    read(m, "d_trip", c.model.d_trip, "model");
    read(m, "dropout", c.model.dropout, "model");
    read(m, "rbf_bases", c.model.rbf_bases, "model");
    read(m, "rbf_r_max", c.model.rbf_r_max, "model");
    read(m, "time_dim", c.model.time_dim, "model");
    read(m, "triplet_cutoff", c.model.triplet_cutoff, "model");
    read(m, "precision", c.model.precision, "model");
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    detail::reject_unknown(s, "schedule", {"kind", "T", "posterior_variance"});
    read_enum(s, "kind", c.schedule.kind, "schedule", parse_schedule_kind);
    read(s, "T", c.schedule.T, "schedule");
    read_enum(s, "posterior_variance", c.schedule.variance, "schedule", parse_posterior_variance);
  }
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    detail::reject_unknown(l, "loss", {"lambda", "gf_weight", "valency_mode", "bond_order_rule", "type_temperature"});
    read(l, "lambda", c.loss.lambda, "loss");
    read_enum(l, "gf_weight", c.loss.weight_mode, "loss", parse_gf_weight);
    read_enum(l, "valency_mode", c.loss.valency_mode, "loss", parse_valency_mode);
    read_enum(l, "bond_order_rule", c.loss.bond_rule, "loss", parse_bond_order_rule);
    read(l, "type_temperature", c.loss.type_temperature, "loss");
  }
  if (j.contains("training")) {
    const auto& t = j["training"];
    detail::reject_unknown(t, "training",
                           {"epochs", "batch_size", "learning_rate", "seed", "grad_clip", "ema_decay",
                            "checkpoint_every", "max_minutes", "lr_decay"});
    read(t, "epochs", c.training.epochs, "training");
    read(t, "batch_size", c.training.batch_size, "training");
    read(t, "learning_rate", c.training.learning_rate, "training");
    read(t, "seed", c.training.seed, "training");
    read(t, "grad_clip", c.training.grad_clip, "training");
    read(t, "ema_decay", c.training.ema_decay, "training");
    read(t, "checkpoint_every", c.training.checkpoint_every, "training");
    read(t, "max_minutes", c.training.max_minutes, "training");
    read(t, "lr_decay", c.training.lr_decay, "training");
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    detail::reject_unknown(d, "data", {"paths", "toy", "toy_count", "toy_seed", "elements", "property", "bond_table"});
    read(d, "paths", c.data.paths, "data");
    read(d, "toy", c.data.toy, "data");
    read(d, "toy_count", c.data.toy_count, "data");
    read(d, "toy_seed", c.data.toy_seed, "data");
    read(d, "elements", c.data.elements, "data");
    read(d, "property", c.data.property, "data");
    read(d, "bond_table", c.data.bond_table, "data");
  }
  read(j, "output_dir", c.output_dir, "config");
  return c;
}

// "a.b=value": value is parsed as JSON when possible, else taken as a string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override key '" + path + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = nlohmann::json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {}) {
  auto j = text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config is not valid JSON");
  for (const auto& o : overrides) apply_override(j, o);
  auto c = config_from_json(j);
  c.validate();
  return c;
}

// Fingerprint of everything that fixes the network's shape and inputs.
inline std::uint64_t model_hash(const RunConfig& c) {
  auto j = to_json(c);
  nlohmann::json key = {{"model", j["model"]},
                        {"elements", j["data"]["elements"]},
                        {"conditional", !c.data.property.empty()},
                        {"schedule", j["schedule"]}};
  return fnv1a64(key.dump());
}

}  // namespace gfm
