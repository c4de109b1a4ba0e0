#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "netroute/common.hpp"
#include "netroute/sim.hpp"

namespace netroute {

using json = nlohmann::json;

struct TraceSettings {
  std::string file;                       // replay this CSV instead of generating
  std::vector<ScheduleSegment> schedule;  // explicit schedule; empty means interleave over the corpus
  std::vector<std::string> interleave{"GOOD", "MID", "BAD"};
  int tasks_per_segment = 50;
  std::optional<std::uint64_t> seed;      // derived from the top-level seed when unset
};

struct CorpusSettings {
  std::string file;                       // JSON-lines corpus; empty means generate
  TaskGenConfig gen;
  std::optional<std::uint64_t> seed;
};

struct ScanSettings {
  bool enabled = false;
  std::vector<double> tau_grid;           // empty means an auto grid over calibration scores
  int tau_nodes = 64;
  std::vector<double> lambdas{8.0, 10.0, 12.0};
};

struct SimSettings {
  bool counterfactual = true;
  bool log_steps = true;
  std::optional<std::string> compare;     // second controller for a paired run
  ScanSettings scan;
};

struct TheorySettings {
  ScoreModelParams model;
  std::vector<double> lambdas{10.0};
  std::vector<double> kappas{0.5, 1.0, 2.0, 4.0};
  int brute_nodes = 4096;
  int frontier_nodes = 201;
  QuadratureSpec quad;
  double fd_step = 1e-4;
};

struct RiskcovSettings {
  std::string log;
  std::string post_log;
  int nodes = 101;
  double pass_fraction = 0.8;
};

struct Tau0Settings {
  std::string records;                    // CSV score,j_edge,j_cloud; empty means the calibration window
};

struct PolicyNetSettings {
  std::string data;                       // CSV of paired outcomes; empty means the calibration window
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir;
  EconParams econ;
  WorldConfig world;
  TraceSettings trace;
  CorpusSettings corpus;
  RunConfig run;
  SimSettings sim;
  TheorySettings theory;
  RiskcovSettings riskcov;
  Tau0Settings tau0;
  PolicyNetSettings policynet;
};

namespace config_detail {

class Reader;
class Writer;

template <class T>
struct is_vector : std::false_type {};
template <class T>
struct is_vector<std::vector<T>> : std::true_type {};

template <class T>
struct is_optional : std::false_type {};
template <class T>
struct is_optional<std::optional<T>> : std::true_type {};

// Reads an object, rejecting keys the visitor never asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError("config: '" + label() + "' must be an object");
  }

  template <class T>
  void operator()(const char* key, T& out) {
    seen_.insert(key);
    const std::string sub = path_.empty() ? key : path_ + "." + key;
    auto it = j_.find(key);
    if constexpr (is_optional<T>::value) {
      if (it == j_.end() || it->is_null()) {
        out.reset();
        return;
      }
      typename T::value_type v{};
      read_value(*it, v, sub);
      out = std::move(v);
    } else {
      if (it == j_.end() || it->is_null()) throw UsageError("config: missing value for '" + sub + "'");
      read_value(*it, out, sub);
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw UsageError("config: unknown key '" + (path_.empty() ? it.key() : path_ + "." + it.key()) + "'");
  }

  template <class T>
  static void read_value(const json& j, T& out, const std::string& path);

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

class Writer {
 public:
  explicit Writer(json& j) : j_(j) { j_ = json::object(); }

  template <class T>
  void operator()(const char* key, const T& v) {
    j_[key] = write_value(v);
  }

  template <class T>
  static json write_value(const T& v);

 private:
  json& j_;
};

// Field lists shared by the reader and the writer.
template <class V>
void fields(V& v, LatencyParams& p) {
  v("edge_latency", p.edge_latency);
  v("cloud_compute", p.cloud_compute);
  v("payload_bytes", p.payload_bytes);
}
template <class V>
void fields(V& v, CostParams& p) {
  v("alpha", p.alpha);
  v("c_tok", p.c_tok);
  v("lambda", p.lambda);
}
template <class V>
void fields(V& v, EconParams& p) {
  v("latency", p.latency);
  v("cost", p.cost);
  v("tokens_base", p.tokens_base);
  v("tokens_per_entry", p.tokens_per_entry);
}
template <class V>
void fields(V& v, DriftParams& p) {
  v("sigma_rtt", p.sigma_rtt);
  v("sigma_bw", p.sigma_bw);
  v("clamp", p.clamp);
}
template <class V>
void fields(V& v, NormBounds& p) {
  v("rtt", p.rtt);
  v("bw", p.bw);
}
template <class V>
void fields(V& v, CatalogConfig& p) {
  v("tools", p.tools);
  v("p_predictable", p.p_predictable);
  v("seed", p.seed);
}
template <class V>
void fields(V& v, SftConfig& p) {
  v("epochs", p.epochs);
  v("lr", p.lr);
  v("batch", p.batch);
}
template <class V>
void fields(V& v, RmTrainConfig& p) {
  v("lr", p.lr);
  v("max_epochs", p.max_epochs);
  v("batch", p.batch);
  v("l2", p.l2);
  v("margin", p.margin);
  v("val_fraction", p.val_fraction);
  v("patience", p.patience);
}
template <class V>
void fields(V& v, TrainHyper& p) {
  v("lr", p.lr);
  v("epochs", p.epochs);
  v("batch", p.batch);
}
template <class V>
void fields(V& v, TaskGenConfig& p) {
  v("count", p.count);
  v("tools_min", p.tools_min);
  v("tools_max", p.tools_max);
  v("target_len_min", p.target_len_min);
  v("target_len_max", p.target_len_max);
  v("prior_min", p.prior_min);
  v("prior_max", p.prior_max);
  v("p_dev", p.p_dev);
  v("p_canonical", p.p_canonical);
}
template <class V>
void fields(V& v, PpoConfig& p) {
  v("clip_eps", p.clip_eps);
  v("kl_beta", p.kl_beta);
  v("gamma", p.gamma);
  v("lr", p.lr);
  v("epochs", p.epochs);
  v("anchor_period", p.anchor_period);
  v("anchor_lr", p.anchor_lr);
  v("anchor_steps", p.anchor_steps);
}
template <class V>
void fields(V& v, ScheduleSegment& p) {
  v("regime", p.regime);
  v("steps", p.steps);
}
template <class V>
void fields(V& v, ScoreModelParams& p) {
  v("mean", p.mean);
  v("sd", p.sd);
  v("lo", p.lo);
  v("hi", p.hi);
  v("q_scale", p.q_scale);
  v("delta_c", p.delta_c);
}
template <class V>
void fields(V& v, QuadratureSpec& p) {
  v("node_count", p.node_count);
  v("panel_order", p.panel_order);
}
template <class V>
void fields(V& v, WorldConfig& p) {
  v("catalog", p.catalog);
  v("p_correct", p.p_correct);
  v("bootstrap_seed", p.bootstrap_seed);
  v("sft_tasks", p.sft_tasks);
  v("sft", p.sft);
  v("rm_tasks", p.rm_tasks);
  v("rm", p.rm);
  v("calibration_tasks", p.calibration_tasks);
  v("calibration_segment", p.calibration_segment);
}
template <class V>
void fields(V& v, TraceSettings& p) {
  v("file", p.file);
  v("schedule", p.schedule);
  v("interleave", p.interleave);
  v("tasks_per_segment", p.tasks_per_segment);
  v("seed", p.seed);
}
template <class V>
void fields(V& v, CorpusSettings& p) {
  v("file", p.file);
  fields(v, p.gen);
  v("seed", p.seed);
}
template <class V>
void fields(V& v, ScanSettings& p) {
  v("enabled", p.enabled);
  v("tau_grid", p.tau_grid);
  v("tau_nodes", p.tau_nodes);
  v("lambdas", p.lambdas);
}
template <class V>
void fields(V& v, SimSettings& p) {
  v("counterfactual", p.counterfactual);
  v("log_steps", p.log_steps);
  v("compare", p.compare);
  v("scan", p.scan);
}
template <class V>
void fields(V& v, TheorySettings& p) {
  v("model", p.model);
  v("lambdas", p.lambdas);
  v("kappas", p.kappas);
  v("brute_nodes", p.brute_nodes);
  v("frontier_nodes", p.frontier_nodes);
  v("quadrature", p.quad);
  v("fd_step", p.fd_step);
}
template <class V>
void fields(V& v, RiskcovSettings& p) {
  v("log", p.log);
  v("post_log", p.post_log);
  v("nodes", p.nodes);
  v("pass_fraction", p.pass_fraction);
}
template <class V>
void fields(V& v, Tau0Settings& p) {
  v("records", p.records);
}
template <class V>
void fields(V& v, PolicyNetSettings& p) {
  v("data", p.data);
}

// Sections of the document that fill parts of other structs.
struct FuncDynSection {
  RunConfig* run;
};
struct ControllerSection {
  RunConfig* run;
};
struct LearningSection {
  RunConfig* run;
};
struct NetworkSection {
  WorldConfig* world;
};
struct WorldSection {
  WorldConfig* world;
};

template <class V>
void fields(V& v, FuncDynSection& s) {
  v("tau0", s.run->funcdyn_tau0);
  v("a_rtt", s.run->funcdyn.a_rtt);
  v("b_bw", s.run->funcdyn.b_bw);
  v("g_hist", s.run->funcdyn.g_hist);
  v("norm", s.run->funcdyn.norm);
}
template <class V>
void fields(V& v, ControllerSection& s) {
  v("kind", s.run->controller);
  v("tau", s.run->tau);
  FuncDynSection fd{s.run};
  v("funcdyn", fd);
  v("ewma_beta", s.run->ewma_beta);
  v("q_hat_init", s.run->q_hat_init);
}
template <class V>
void fields(V& v, LearningSection& s) {
  RunConfig& r = *s.run;
  v("enabled", r.learning);
  v("idle_period", r.idle_period);
  v("ppo", r.ppo);
  v("anchoring", r.anchoring);
  v("rm_refresh", r.rm_refresh);
  v("rm_refresh_period", r.rm_refresh_period);
  v("rm_refresh_train", r.rm_refresh_cfg);
  v("recalibration", r.recalibration);
  v("near_delta_scale", r.near_delta_scale);
  v("near_fraction", r.near_fraction);
  v("cache_capacity", r.cache_capacity);
}
template <class V>
void fields(V& v, NetworkSection& s) {
  v("regimes", s.world->regimes);
  v("drift", s.world->drift);
}
template <class V>
void fields(V& v, WorldSection& s) {
  fields(v, *s.world);
  v("policynet_train", s.world->policynet_train);
}
template <class V>
void fields(V& v, ExperimentConfig& c) {
  v("seed", c.seed);
  v("output_dir", c.output_dir);
  v("econ", c.econ);
  NetworkSection net{&c.world};
  v("network", net);
  WorldSection world{&c.world};
  v("world", world);
  v("corpus", c.corpus);
  v("trace", c.trace);
  ControllerSection ctl{&c.run};
  v("controller", ctl);
  LearningSection learn{&c.run};
  v("learning", learn);
  v("sim", c.sim);
  v("theory", c.theory);
  v("riskcov", c.riskcov);
  v("tau0", c.tau0);
  v("policynet", c.policynet);
}

template <class T>
void Reader::read_value(const json& j, T& out, const std::string& path) {
  auto fail = [&](const char* want) { throw UsageError("config: '" + path + "' must be " + want); };
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) fail("a boolean");
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) fail("a nonnegative integer");
    out = static_cast<T>(j.get<unsigned long long>());
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) fail("an integer");
    out = static_cast<T>(j.get<long long>());
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) fail("a number");
    out = j.get<double>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) fail("a string");
    out = j.get<std::string>();
  } else if constexpr (std::is_same_v<T, ControllerKind>) {
    if (!j.is_string()) fail("a controller name");
    out = parse_controller(j.get<std::string>());
  } else if constexpr (std::is_same_v<T, Recalibration>) {
    if (!j.is_string()) fail("\"none\" or \"calibration\"");
    const auto s = j.get<std::string>();
    if (s == "none") out = Recalibration::None;
    else if (s == "calibration") out = Recalibration::Calibration;
    else fail("\"none\" or \"calibration\"");
  } else if constexpr (std::is_same_v<T, Range>) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) fail("a [lo, hi] pair");
    out = {j[0].get<double>(), j[1].get<double>()};
  } else if constexpr (std::is_same_v<T, RegimeTable>) {
    if (!j.is_array() || j.empty()) fail("a nonempty list of regimes");
    out.regimes.clear();
    for (std::size_t i = 0; i < j.size(); ++i) {
      const std::string sub = path + "[" + std::to_string(i) + "]";
      Reader r(j[i], sub);
      std::string name;
      Range bw, rtt;
      r("name", name);
      r("bw", bw);
      r("rtt", rtt);
      r.finish();
      for (const auto& existing : out.regimes)
        if (existing.name() == name) throw UsageError("config: duplicate regime '" + name + "'");
      out.regimes.emplace_back(name, bw, rtt);
    }
  } else if constexpr (is_vector<T>::value) {
    if (!j.is_array()) fail("a list");
    out.clear();
    for (std::size_t i = 0; i < j.size(); ++i) {
      typename T::value_type v{};
      read_value(j[i], v, path + "[" + std::to_string(i) + "]");
      out.push_back(std::move(v));
    }
  } else {
    Reader r(j, path);
    fields(r, out);
    r.finish();
  }
}

template <class T>
json Writer::write_value(const T& v) {
  if constexpr (is_optional<T>::value) {
    return v ? write_value(*v) : json(nullptr);
  } else if constexpr (std::is_same_v<T, bool> || std::is_arithmetic_v<T> || std::is_same_v<T, std::string>) {
    return json(v);
  } else if constexpr (std::is_same_v<T, ControllerKind>) {
    return json(controller_name(v));
  } else if constexpr (std::is_same_v<T, Recalibration>) {
    return json(v == Recalibration::None ? "none" : "calibration");
  } else if constexpr (std::is_same_v<T, Range>) {
    return json::array({v.lo, v.hi});
  } else if constexpr (std::is_same_v<T, RegimeTable>) {
    json a = json::array();
    for (const auto& r : v.regimes)
      a.push_back({{"name", r.name()}, {"bw", write_value(r.bw_range())}, {"rtt", write_value(r.rtt_range())}});
    return a;
  } else if constexpr (is_vector<T>::value) {
    json a = json::array();
    for (const auto& x : v) a.push_back(write_value(x));
    return a;
  } else {
    json out;
    Writer w(out);
    fields(w, const_cast<T&>(v));
    return out;
  }
}

}  // namespace config_detail

inline std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t key) { return splitmix64(seed ^ splitmix64(key)) >> 11; }

// Fills derived values and cross-section links, then checks invariants.
inline void resolve_config(ExperimentConfig& c) {
  if (!c.corpus.seed) c.corpus.seed = derived_seed(c.seed, 0x636f72707573ULL);
  if (!c.trace.seed) c.trace.seed = derived_seed(c.seed, 0x7472616365ULL);
  c.corpus.gen.seed = *c.corpus.seed;
  c.corpus.gen.id_offset = 0;
  c.world.tasks = c.corpus.gen;
  c.world.funcdyn = c.run.funcdyn;
  c.run.seed = c.seed;
  c.run.counterfactual = c.sim.counterfactual;
  c.run.log_steps = c.sim.log_steps;
  c.run.validate();
  if (c.sim.compare) parse_controller(*c.sim.compare);
  if (c.trace.tasks_per_segment < 1) throw UsageError("config: trace.tasks_per_segment must be positive");
  if (c.trace.interleave.empty()) throw UsageError("config: trace.interleave must name at least one regime");
  for (const auto& name : c.trace.interleave) c.world.regimes.find(name);
  for (const auto& seg : c.trace.schedule) {
    c.world.regimes.find(seg.regime);
    if (seg.steps < 0) throw UsageError("config: trace.schedule steps must be nonnegative");
  }
  for (const char* name : {"GOOD", "MID", "BAD"}) c.world.regimes.find(name);
  if (!(c.world.p_correct >= 0.0 && c.world.p_correct <= 1.0)) throw UsageError("config: world.p_correct must be in [0,1]");
  if (c.world.sft_tasks < 1 || c.world.rm_tasks < 1 || c.world.calibration_tasks < 1 || c.world.calibration_segment < 1)
    throw UsageError("config: world task counts must be positive");
  if (c.sim.scan.tau_nodes < 1) throw UsageError("config: sim.scan.tau_nodes must be positive");
  if (c.riskcov.nodes < 2) throw UsageError("config: riskcov.nodes must be at least 2");
  if (c.theory.brute_nodes < 2 || c.theory.frontier_nodes < 2) throw UsageError("config: theory grids need at least 2 nodes");
  if (!(c.theory.fd_step > 0.0)) throw UsageError("config: theory.fd_step must be positive");
  c.theory.model.validate();
  if (!(c.econ.cost.lambda >= 0.0) || c.econ.cost.alpha < 0.0 || c.econ.cost.c_tok < 0.0)
    throw UsageError("config: econ costs must be nonnegative");
}

inline json config_to_json(const ExperimentConfig& c) { return config_detail::Writer::write_value(c); }

// Overlays `user` on the defaults; unknown keys and ill-typed values are usage errors.
inline ExperimentConfig config_from_json(const json& user) {
  if (!user.is_object()) throw UsageError("config: the document must be a JSON object");
  json merged = config_to_json(ExperimentConfig{});
  merged.merge_patch(user);
  ExperimentConfig c;
  config_detail::Reader::read_value(merged, c, "");
  resolve_config(c);
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

// Applies "a.b.c=value" to a document; the value is parsed as JSON, falling back to a string.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw UsageError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline constexpr const char* kOutDirEnv = "NETROUTE_OUT_DIR";
inline constexpr const char* kDefaultOutDir = "netroute-out";

// Flag, then config value, then environment, then the built-in default.
inline std::string resolve_output_dir(const std::string& flag, const std::string& configured) {
  if (!flag.empty()) return flag;
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return kDefaultOutDir;
}

}  // namespace netroute
