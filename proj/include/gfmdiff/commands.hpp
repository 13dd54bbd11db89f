#pragma once

// The four user-facing operations: train, sample, evaluate, inspect-schedule.
// Each writes only inside the output directory it is given.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gfmdiff/checkpoint.hpp"
#include "gfmdiff/chem.hpp"
#include "gfmdiff/config.hpp"
#include "gfmdiff/dataio.hpp"
#include "gfmdiff/diffusion.hpp"
#include "gfmdiff/dtn.hpp"
#include "gfmdiff/optim.hpp"
#include "json.hpp"

namespace gfm {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  Dataset dataset;
  std::vector<MoleculeState> states;
  std::vector<std::vector<double>> valencies;
  std::vector<std::optional<double>> contexts;  // standardized
  SizeHistogram sizes;
  std::optional<PropertyStats> stats;
};

inline PreparedData prepare_data(const RunConfig& c) {
  const auto elements = c.element_set();
  const auto table = c.bond_table();
  const auto scaling = c.scaling();
  PreparedData p;
  if (!c.data.toy.empty()) {
    Rng rng(c.data.toy_seed);
    ToyOptions opt;
    opt.rule = c.loss.bond_rule;
    p.dataset = toy_dataset(parse_toy_kind(c.data.toy), c.data.toy_count, rng, table, opt);
  } else {
    for (const auto& path : c.data.paths) {
      auto d = load_dataset(path);
      if (!p.dataset.molecules.empty() && d.property_names != p.dataset.property_names) {
        throw DataError("data paths disagree on property columns");
      }
      p.dataset.property_names = d.property_names;
      p.dataset.molecules.insert(p.dataset.molecules.end(), d.molecules.begin(), d.molecules.end());
    }
  }
  if (p.dataset.molecules.empty()) throw DataError("dataset is empty");
  p.dataset.validate(elements);

  std::optional<std::size_t> prop;
  if (!c.data.property.empty()) {
    const auto& names = p.dataset.property_names;
    auto it = std::find(names.begin(), names.end(), c.data.property);
    if (it == names.end()) throw DataError("dataset has no property named '" + c.data.property + "'");
    prop = static_cast<std::size_t>(it - names.begin());
    std::vector<std::size_t> all(p.dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    p.stats = p.dataset.property_stats(*prop, all);
  }
  for (const auto& m : p.dataset.molecules) {
    auto v = reference_valencies(m, table, c.loss.bond_rule);
    p.states.push_back(encode_state(m.symbols, m.coords, v, elements, scaling));
    p.valencies.emplace_back(v.begin(), v.end());
    p.contexts.push_back(prop ? std::optional<double>(p.stats->standardize(m.properties.at(*prop))) : std::nullopt);
  }
  p.sizes = p.dataset.size_histogram();
  return p;
}

namespace detail {

inline nlohmann::json histogram_json(const SizeHistogram& h) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [n, c] : h) j[std::to_string(n)] = c;
  return j;
}

inline SizeHistogram histogram_from_json(const nlohmann::json& j) {
  SizeHistogram h;
  for (const auto& [k, v] : j.items()) h[static_cast<std::size_t>(std::stoull(k))] = v.get<std::size_t>();
  return h;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Train

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double total = 0, mse = 0, gf = 0;
  double seconds = 0;
};

struct TrainReport {
  double baseline_loss = 0;  // fixed-noise evaluation loss before the first update
  double final_loss = 0;     // same evaluation after the last update
  std::vector<EpochLog> epochs;
  std::string checkpoint;
  bool stopped_on_time = false;
};

struct TrainOptions {
  std::string resume;  // checkpoint path, empty to start fresh
  std::ostream* log = nullptr;
  std::size_t eval_draws = 256;
};

namespace detail {

// Mean loss over a fixed subset with fixed noise draws, no dropout.
template <class T>
double evaluation_loss(Dtn<T>& model, const PreparedData& p, const RunConfig& c, const NoiseSchedule& s,
                       const BondTable& table, const FeatureScaling& scaling, std::size_t limit) {
  NoGradGuard no_grad;
  Rng rng(Rng::derive(c.training.seed, 7));
  // small corpora are cycled so the estimate always averages `limit` noise draws
  const std::size_t n = std::max<std::size_t>(limit, 1);
  double total = 0;
  for (std::size_t draw = 0; draw < n; ++draw) {
    const std::size_t i = draw % p.states.size();
    const auto t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(s.T)));
    auto terms = training_loss<T>(model, p.states[i], p.valencies[i], t, p.contexts[i], s, table, scaling, c.loss, rng,
                                  false);
    total += static_cast<double>(terms.total.item());
  }
  return total / static_cast<double>(n);
}

template <class T>
void save_run(const std::string& path, const RunConfig& c, Dtn<T>& model, Adam<T>& adam, const ParameterEma<T>& ema,
              const Rng& rng, std::size_t epoch, const PreparedData& p) {
  Checkpoint ck;
  ck.config_hash = model_hash(c);
  ck.meta["config"] = to_json(c).dump();
  ck.meta["epoch"] = std::to_string(epoch);
  ck.meta["rng"] = rng.state();
  ck.meta["adam_step"] = std::to_string(adam.step_count());
  ck.meta["size_histogram"] = histogram_json(p.sizes).dump();
  if (p.stats) ck.meta["property_stats"] = nlohmann::json{{"mean", p.stats->mean}, {"std", p.stats->std}}.dump();
  const auto& params = model.parameters().all();
  store_parameters(ck, model.parameters(), "param/");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& shape = params[k].tensor.shape();
    ck.put_tensor<T>("ema/" + params[k].name, shape, ema.shadow()[k]);
    ck.put_tensor<T>("adam_m/" + params[k].name, shape, adam.first_moments()[k]);
    ck.put_tensor<T>("adam_v/" + params[k].name, shape, adam.second_moments()[k]);
  }
  const auto tmp = path + ".tmp";
  ck.save(tmp);
  std::filesystem::rename(tmp, path);
}

template <class T>
TrainReport train_impl(const RunConfig& c, const TrainOptions& opt) {
  namespace fs = std::filesystem;
  const auto table = c.bond_table();
  const auto scaling = c.scaling();
  const auto schedule = c.noise_schedule();
  auto data = prepare_data(c);

  Rng init_rng(Rng::derive(c.training.seed, 1));
  Dtn<T> model(c.dtn(), init_rng);
  AdamOptions ao;
  ao.learning_rate = c.training.learning_rate;
  Adam<T> adam(model.parameters(), ao);
  ParameterEma<T> ema(model.parameters(), c.training.ema_decay);
  Rng rng(Rng::derive(c.training.seed, 2));
  std::size_t start_epoch = 0;

  if (!opt.resume.empty()) {
    auto ck = Checkpoint::load(opt.resume);
    if (ck.config_hash != model_hash(c)) throw CheckpointError("checkpoint " + opt.resume + " was trained with a different model config");
    load_parameters(ck, model.parameters(), "param/");
    const auto& params = model.parameters().all();
    for (std::size_t k = 0; k < params.size(); ++k) {
      ema.shadow()[k] = ck.values<T>("ema/" + params[k].name);
      adam.first_moments()[k] = ck.values<T>("adam_m/" + params[k].name);
      adam.second_moments()[k] = ck.values<T>("adam_v/" + params[k].name);
    }
    adam.set_step_count(std::stoull(ck.meta_at("adam_step")));
    rng.restore(ck.meta_at("rng"));
    start_epoch = std::stoull(ck.meta_at("epoch"));
  }

  fs::create_directories(c.output_dir);
  const auto ckpt_path = (fs::path(c.output_dir) / "checkpoint.bin").string();
  write_text(fs::path(c.output_dir) / "config.json", to_json(c).dump(2) + "\n");
  const auto metrics_path = fs::path(c.output_dir) / "metrics.csv";
  std::ofstream metrics(metrics_path, start_epoch > 0 ? std::ios::app : std::ios::trunc);
  if (start_epoch == 0) metrics << "epoch,loss,eps_mse,gf_loss,gf_in_objective,seconds\n";

  TrainReport report;
  report.checkpoint = ckpt_path;
  report.baseline_loss = evaluation_loss(model, data, c, schedule, table, scaling, opt.eval_draws);
  if (opt.log) *opt.log << "untrained evaluation loss " << report.baseline_loss << "\n";

  const auto t_begin = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(data.states.size());
  const bool cosine = c.training.lr_decay == "cosine";
  const std::size_t total_steps =
      c.training.epochs * ((order.size() + c.training.batch_size - 1) / c.training.batch_size);
  for (std::size_t epoch = start_epoch; epoch < c.training.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    EpochLog log;
    log.epoch = epoch + 1;
    for (std::size_t b = 0; b < order.size(); b += c.training.batch_size) {
      const std::size_t e = std::min(order.size(), b + c.training.batch_size);
      const T inv = static_cast<T>(1.0 / static_cast<double>(e - b));
      model.parameters().zero_grad();
      for (std::size_t k = b; k < e; ++k) {
        const auto i = order[k];
        const auto t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(schedule.T)));
        auto terms = training_loss<T>(model, data.states[i], data.valencies[i], t, data.contexts[i], schedule, table,
                                      scaling, c.loss, rng, true);
        const double total = static_cast<double>(terms.total.item());
        if (!std::isfinite(total)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", molecule " + std::to_string(i));
        }
        backward(scale(terms.total, inv));
        log.total += total;
        log.mse += terms.mse;
        log.gf += terms.gf;
      }
      clip_grad_norm(model.parameters(), c.training.grad_clip);
      if (cosine) {
        const double progress = static_cast<double>(adam.step_count()) / static_cast<double>(total_steps);
        adam.set_learning_rate(0.5 * c.training.learning_rate * (1.0 + std::cos(std::numbers::pi * progress)));
      }
      adam.step();
      ema.update(model.parameters());
    }
    const double n = static_cast<double>(order.size());
    log.total /= n;
    log.mse /= n;
    log.gf /= n;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(log);
    metrics << log.epoch << ',' << std::setprecision(10) << log.total << ',' << log.mse << ',' << log.gf << ','
            << (c.loss.lambda > 0.0 ? "yes" : "no") << ',' << std::setprecision(4) << log.seconds << '\n';
    metrics.flush();
    if (opt.log) {
      *opt.log << "epoch " << log.epoch << " loss " << log.total << " eps_mse " << log.mse << " gf " << log.gf
               << (c.loss.lambda > 0.0 ? "" : " (monitored, not optimized)") << "\n";
    }
    const bool last = epoch + 1 == c.training.epochs;
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count() / 60.0;
    const bool out_of_time = c.training.max_minutes > 0.0 && minutes >= c.training.max_minutes;
    if (last || out_of_time || (c.training.checkpoint_every > 0 && (epoch + 1) % c.training.checkpoint_every == 0)) {
      save_run(ckpt_path, c, model, adam, ema, rng, epoch + 1, data);
    }
    if (out_of_time && !last) {
      report.stopped_on_time = true;
      if (opt.log) *opt.log << "stopping after epoch " << epoch + 1 << ": time budget reached\n";
      break;
    }
  }
  if (start_epoch >= c.training.epochs) save_run(ckpt_path, c, model, adam, ema, rng, start_epoch, data);
  report.final_loss = evaluation_loss(model, data, c, schedule, table, scaling, opt.eval_draws);
  return report;
}

}  // namespace detail

inline TrainReport cmd_train(const RunConfig& c, const TrainOptions& opt = {}) {
  c.validate();
  return c.model.precision == "float64" ? detail::train_impl<double>(c, opt) : detail::train_impl<float>(c, opt);
}

// ---------------------------------------------------------------------------
// Sample

struct SampleOptions {
  std::string checkpoint;
  std::size_t count = 10;
  std::optional<std::size_t> n_atoms;
  std::optional<double> context;  // raw property units
  std::uint64_t seed = 0;
  std::string out_dir = "samples";
  std::string format = "xyz";  // xyz | sdf
  std::size_t trajectory_every = 0;
  bool use_ema = true;
  std::optional<RunConfig> expected;  // when given, its model config must match the checkpoint
};

struct SampleReport {
  std::vector<Molecule> molecules;
  std::vector<std::string> files;
  std::string manifest;
};

namespace detail {

inline Molecule molecule_from_state(const MoleculeState& s, const ElementSet& elements, const FeatureScaling& scaling) {
  auto d = decode_state(s, elements, scaling);
  Molecule m;
  m.symbols = d.symbols;
  m.coords = d.coords;
  return m;
}

template <class T>
SampleReport sample_impl(const Checkpoint& ck, const RunConfig& c, const SampleOptions& opt) {
  namespace fs = std::filesystem;
  Rng init(0);
  Dtn<T> model(c.dtn(), init);
  load_parameters(ck, model.parameters(), opt.use_ema ? "ema/" : "param/");
  const auto schedule = c.noise_schedule();
  const auto elements = c.element_set();
  const auto scaling = c.scaling();
  const auto table = c.bond_table();
  const auto sizes = histogram_from_json(nlohmann::json::parse(ck.meta_at("size_histogram")));

  std::optional<double> z;
  if (c.dtn().conditioning_dim > 0) {
    const auto st = nlohmann::json::parse(ck.meta_at("property_stats"));
    const PropertyStats stats{st.at("mean").get<double>(), st.at("std").get<double>()};
    z = stats.standardize(opt.context.value_or(stats.mean));
  }

  fs::create_directories(opt.out_dir);
  SampleReport report;
  nlohmann::json manifest = {{"checkpoint", opt.checkpoint},
                             {"config_hash", std::to_string(ck.config_hash)},
                             {"seed", opt.seed},
                             {"count", opt.count},
                             {"weights", opt.use_ema ? "ema" : "raw"},
                             {"format", opt.format},
                             {"molecules", nlohmann::json::array()}};
  if (opt.context) manifest["context"] = *opt.context;
  for (std::size_t i = 0; i < opt.count; ++i) {
    const auto seed = Rng::derive(opt.seed, i);
    Rng rng(seed);
    const std::size_t n = opt.n_atoms ? *opt.n_atoms : sample_size(sizes, rng);
    auto r = sample<T>(model, n, scaling.width(), z, schedule, rng, opt.trajectory_every);
    for (double v : r.state.P)
      if (!std::isfinite(v)) throw NumericError("sample " + std::to_string(i) + " diverged to non-finite coordinates");
    auto m = molecule_from_state(r.state, elements, scaling);
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%04zu", i);
    m.comment = std::string(stem) + " seed=" + std::to_string(seed);
    const auto g = infer_graph(m.coords, m.symbols, table, c.loss.bond_rule);
    const std::string file = std::string(stem) + "." + opt.format;
    write_text(fs::path(opt.out_dir) / file, opt.format == "sdf" ? write_sdf(g, m.comment) : write_xyz(m));
    nlohmann::json entry = {{"file", file}, {"seed", seed}, {"atoms", n}, {"stable", molecule_is_stable(g, ValenceTable{})}};
    if (!r.frames.empty()) {
      std::vector<std::size_t> steps;
      for (std::size_t t = schedule.T + 1; t-- > 0;)
        if (t % opt.trajectory_every == 0) steps.push_back(t);
      std::vector<Molecule> frames;
      for (std::size_t k = 0; k < r.frames.size(); ++k) {
        frames.push_back(molecule_from_state(r.frames[k], elements, scaling));
        frames.back().comment = std::string(stem) + " t=" + std::to_string(steps.at(k));
      }
      const std::string traj = "trajectories/" + std::string(stem) + ".xyz";
      fs::create_directories(fs::path(opt.out_dir) / "trajectories");
      write_text(fs::path(opt.out_dir) / traj, write_xyz(frames));
      entry["trajectory"] = traj;
      entry["frames"] = frames.size();
    }
    manifest["molecules"].push_back(entry);
    report.files.push_back((fs::path(opt.out_dir) / file).string());
    report.molecules.push_back(std::move(m));
  }
  report.manifest = (fs::path(opt.out_dir) / "manifest.json").string();
  write_text(report.manifest, manifest.dump(2) + "\n");
  return report;
}

}  // namespace detail

inline SampleReport cmd_sample(const SampleOptions& opt) {
  if (opt.format != "xyz" && opt.format != "sdf") throw UsageError("format must be xyz or sdf");
  if (opt.count < 1) throw UsageError("count must be at least 1");
  if (opt.n_atoms && *opt.n_atoms < 1) throw UsageError("atom count must be at least 1");
  const auto ck = Checkpoint::load(opt.checkpoint);
  RunConfig c;
  try {
    c = config_from_json(nlohmann::json::parse(ck.meta_at("config")));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is unreadable: ") + e.what());
  }
  if (model_hash(c) != ck.config_hash) throw CheckpointError("checkpoint config does not match its stored hash");
  if (opt.expected && model_hash(*opt.expected) != ck.config_hash) {
    throw CheckpointError("model config differs from the one " + opt.checkpoint + " was trained with");
  }
  if (opt.context && c.data.property.empty()) {
    throw UsageError("checkpoint is unconditional; a context value cannot be used");
  }
  return c.model.precision == "float64" ? detail::sample_impl<double>(ck, c, opt) : detail::sample_impl<float>(ck, c, opt);
}

// ---------------------------------------------------------------------------
// Evaluate

struct EvalOptions {
  BondOrderRule rule = BondOrderRule::kArgminMargin;
  ValidityMode validity = ValidityMode::kStrict;
  bool use_file_bonds = false;  // otherwise bonds are always perceived from geometry
};

struct EvalReport {
  MetricsReport metrics;
  std::size_t files = 0;
  std::vector<std::string> failures;  // "path: reason"
};

inline EvalReport cmd_evaluate(const std::vector<std::string>& paths, const EvalOptions& opt = {}) {
  EvalReport report;
  std::vector<Molecule> molecules;
  for (const auto& path : paths) {
    std::vector<std::string> files;
    try {
      files = structure_files(path);
    } catch (const std::exception& e) {
      report.failures.push_back(path + ": " + e.what());
      continue;
    }
    for (const auto& f : files) {
      ++report.files;
      try {
        auto ms = load_structures(f);
        for (const auto& m : ms) {
          for (const auto& s : m.symbols)
            if (!find_element(s)) throw UnknownElementError(s);
        }
        molecules.insert(molecules.end(), ms.begin(), ms.end());
      } catch (const std::exception& e) {
        report.failures.push_back(f + ": " + e.what());
      }
    }
  }
  std::set<std::string> present;
  for (const auto& m : molecules) present.insert(m.symbols.begin(), m.symbols.end());
  std::vector<std::string> ordered;
  for (const auto& e : element_catalog())
    if (present.count(e.symbol)) ordered.push_back(e.symbol);
  std::vector<MoleculeGraph> graphs;
  if (!ordered.empty()) {
    const auto table = BondTable::standard(ElementSet(ordered));
    for (const auto& m : molecules) {
      graphs.push_back(opt.use_file_bonds && m.bonds ? m.graph() : infer_graph(m.coords, m.symbols, table, opt.rule));
    }
  }
  report.metrics = evaluate_graphs(graphs, ValenceTable{}, opt.validity);
  return report;
}

inline std::string format_metrics(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "molecules                 " << r.metrics.molecules << "\n";
  os << "atoms                     " << r.metrics.atoms << "\n";
  os << "atom_stability            " << r.metrics.atom_stability << "\n";
  os << "molecule_stability        " << r.metrics.molecule_stability << "\n";
  os << "validity                  " << r.metrics.validity << "\n";
  os << "uniqueness                " << r.metrics.uniqueness << "\n";
  os << "uniqueness_x_validity     " << r.metrics.uniqueness_times_validity << "\n";
  return os.str();
}

inline nlohmann::json metrics_json(const EvalReport& r) {
  return {{"molecules", r.metrics.molecules},
          {"atoms", r.metrics.atoms},
          {"atom_stability", r.metrics.atom_stability},
          {"molecule_stability", r.metrics.molecule_stability},
          {"validity", r.metrics.validity},
          {"uniqueness", r.metrics.uniqueness},
          {"uniqueness_x_validity", r.metrics.uniqueness_times_validity},
          {"files", r.files},
          {"failures", r.failures}};
}

// ---------------------------------------------------------------------------
// Inspect schedule

// Columns t, beta, alpha_bar, snr, sigma2, omega; omega is empty at t = 0.
inline std::string schedule_csv(const NoiseSchedule& s) {
  std::string out = "t,beta,alpha_bar,snr,sigma2,omega\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t t = 0; t <= s.T; ++t) {
    out += std::to_string(t) + "," + num(s.beta[t]) + "," + num(s.alpha_bar[t]) + "," + num(s.snr[t]) + "," +
           num(s.sigma2[t]) + "," + (t == 0 ? std::string() : num(s.omega(t))) + "\n";
  }
  return out;
}

}  // namespace gfm
