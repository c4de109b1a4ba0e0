#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "netroute/common.hpp"

namespace netroute {

struct SlotDef {
  std::string name;
  std::vector<std::string> domain;
  bool predictable = false;  // value mostly determined by (tool, slot, length bucket)
};

struct ToolSpec {
  std::string name;
  std::vector<SlotDef> slots;
};

inline constexpr int kFinishTool = 0;
inline constexpr int kLengthBuckets = 4;
inline constexpr int kStepCap = 12;
inline constexpr std::size_t kSummaryCap = 160;

inline int length_bucket(int target_len) { return std::clamp((target_len - 1) / 2, 0, kLengthBuckets - 1); }

struct CatalogConfig {
  int tools = 24;           // excluding finish()
  double p_predictable = 0.6;
  std::uint64_t seed = 7;
};

// Global tool universe shared by every task, with the latent structure tasks are drawn from.
struct ToolCatalog {
  std::vector<ToolSpec> tools;                 // index 0 is finish()
  std::vector<int> successor;                  // canonical next tool; index tools.size() is the start state
  std::vector<std::vector<std::vector<int>>> canonical;  // [tool][slot][bucket] -> value index

  int size() const { return static_cast<int>(tools.size()); }
  int start_state() const { return size(); }

  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (tools[i].name == name) return i;
    return -1;
  }
};

inline ToolCatalog make_catalog(const CatalogConfig& cfg = {}) {
  static const std::vector<std::string> kToolNames = {
      "simulate_topology", "measure_latency", "probe_bandwidth", "query_routing_table",
      "configure_qos",     "allocate_slice",  "trace_route",     "scan_ports",
      "update_firewall",   "fetch_metrics",   "compress_payload", "schedule_job",
      "migrate_service",   "deploy_container", "rollback_release", "check_health",
      "resolve_dns",       "rotate_keys",     "balance_load",    "snapshot_state",
      "restore_backup",    "open_ticket",     "notify_oncall",   "summarize_logs"};
  static const std::vector<std::pair<std::string, std::vector<std::string>>> kSlotPool = {
      {"node_count", {"2", "4", "8", "16", "32"}},
      {"protocol", {"tcp", "udp", "quic", "sctp"}},
      {"region", {"us-east", "eu-west", "ap-south", "sa-east", "af-north"}},
      {"priority", {"low", "normal", "high"}},
      {"interface", {"eth0", "eth1", "wlan0", "lo"}},
      {"mode", {"dry_run", "apply"}},
      {"window", {"1m", "5m", "15m", "1h", "1d"}},
      {"format", {"json", "csv", "text"}},
      {"scope", {"edge", "cloud", "both"}},
      {"level", {"debug", "info", "warn", "error"}}};
  if (cfg.tools < 2 || cfg.tools > static_cast<int>(kToolNames.size()))
    throw UsageError("catalog tool count must be in [2, 24]");
  if (!(cfg.p_predictable >= 0.0 && cfg.p_predictable <= 1.0))
    throw UsageError("catalog p_predictable must be in [0,1]");

  Rng rng = stream_rng(cfg.seed, {0x636174616c6f67ULL});
  ToolCatalog cat;
  cat.tools.push_back({"finish", {}});
  for (int t = 0; t < cfg.tools; ++t) {
    ToolSpec spec{kToolNames[t], {}};
    const int n_slots = std::uniform_int_distribution<int>(0, 3)(rng);
    std::vector<int> pool(kSlotPool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i);
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int k = 0; k < n_slots; ++k) {
      const auto& [name, values] = kSlotPool[pool[k]];
      const int dom = std::uniform_int_distribution<int>(2, std::min<int>(5, values.size()))(rng);
      SlotDef slot{name, {values.begin(), values.begin() + dom}, uniform01(rng) < cfg.p_predictable};
      spec.slots.push_back(std::move(slot));
    }
    cat.tools.push_back(std::move(spec));
  }
  const int n = cat.size();
  cat.successor.assign(n + 1, kFinishTool);
  for (int from = 1; from <= n; ++from) {
    if (from == kFinishTool) continue;
    int next;
    do {
      next = std::uniform_int_distribution<int>(1, n - 1)(rng);
    } while (next == from);
    cat.successor[from] = next;
  }
  cat.canonical.resize(n);
  for (int t = 0; t < n; ++t) {
    cat.canonical[t].resize(cat.tools[t].slots.size());
    for (std::size_t s = 0; s < cat.tools[t].slots.size(); ++s) {
      const int dom = static_cast<int>(cat.tools[t].slots[s].domain.size());
      for (int b = 0; b < kLengthBuckets; ++b)
        cat.canonical[t][s].push_back(std::uniform_int_distribution<int>(0, dom - 1)(rng));
    }
  }
  return cat;
}

// slot == -1 marks an undeclared extra slot; value == -1 marks an out-of-domain value.
struct Arg {
  int slot = 0;
  int value = 0;

  friend bool operator==(const Arg&, const Arg&) = default;
};

struct StructuredAction {
  int tool = kFinishTool;
  std::vector<Arg> args;
  std::string thought;

  // Equality ignores the free-text thought.
  bool same_call(const StructuredAction& o) const { return tool == o.tool && args == o.args; }
};

struct Task {
  int id = 0;
  std::string query;
  std::vector<int> tools;               // available catalog ids, ascending, always includes finish()
  std::vector<StructuredAction> target;  // ends with finish()
  std::vector<int> prior_steps;          // tool ids completed before the episode starts

  int target_len() const { return static_cast<int>(target.size()); }
  int bucket() const { return length_bucket(target_len()); }
  bool has_tool(int t) const { return std::binary_search(tools.begin(), tools.end(), t); }
  // Steps past the end of the plan expect finish().
  const StructuredAction& expected(int step) const {
    static const StructuredAction finish{kFinishTool, {}, ""};
    return step < target_len() ? target[step] : finish;
  }
};

struct ContextEntry {
  int tool = kFinishTool;
  bool has_summary = false;
  std::string summary;
  bool truncated = false;
};

struct Context {
  std::vector<ContextEntry> completed;
  int k = 0;  // steps executed in this episode

  int last_tool(int start_state) const { return completed.empty() ? start_state : completed.back().tool; }
};

inline Context initial_context(const Task& task) {
  Context ctx;
  for (int t : task.prior_steps) ctx.completed.push_back({t, false, {}, false});
  return ctx;
}

// Edge appends the executed tool id only; cloud also appends a capped summary.
inline Context update_context(const Context& ctx, Venue decision, int tool_id, const std::string& summary) {
  Context next = ctx;
  ContextEntry e{tool_id, false, {}, false};
  if (decision == Venue::Cloud) {
    e.has_summary = true;
    e.summary = summary.substr(0, std::min(summary.size(), kSummaryCap));
    e.truncated = summary.size() > kSummaryCap;
  }
  next.completed.push_back(std::move(e));
  next.k = ctx.k + 1;
  return next;
}

inline std::string action_summary(const ToolCatalog& cat, const StructuredAction& a) {
  std::string out = (a.tool >= 0 && a.tool < cat.size() ? cat.tools[a.tool].name : std::string("unknown")) + " ok:";
  for (const auto& arg : a.args) {
    if (a.tool < 0 || a.tool >= cat.size()) break;
    const auto& slots = cat.tools[a.tool].slots;
    if (arg.slot < 0 || arg.slot >= static_cast<int>(slots.size())) continue;
    const auto& dom = slots[arg.slot].domain;
    out += " " + slots[arg.slot].name + "=" +
           (arg.value >= 0 && arg.value < static_cast<int>(dom.size()) ? dom[arg.value] : "?");
  }
  return out;
}

inline bool validate_schema(const ToolCatalog& cat, const StructuredAction& a, const Task& task) {
  if (a.tool < 0 || a.tool >= cat.size() || !task.has_tool(a.tool)) return false;
  const auto& slots = cat.tools[a.tool].slots;
  if (a.args.size() != slots.size()) return false;
  std::vector<bool> seen(slots.size(), false);
  for (const auto& arg : a.args) {
    if (arg.slot < 0 || arg.slot >= static_cast<int>(slots.size()) || seen[arg.slot]) return false;
    seen[arg.slot] = true;
    if (arg.value < 0 || arg.value >= static_cast<int>(slots[arg.slot].domain.size())) return false;
  }
  return true;
}

// Frozen rubric: exact call 1.0, right tool with some wrong argument 0.5, otherwise 0.
inline double evaluate_quality(const StructuredAction& a, const Task& task, int step_index) {
  if (step_index < 0 || step_index >= kStepCap) throw UsageError("evaluate_quality: step index out of range");
  const auto& want = task.expected(step_index);
  if (a.tool != want.tool) return 0.0;
  auto sorted = [](std::vector<Arg> v) {
    std::sort(v.begin(), v.end(), [](const Arg& x, const Arg& y) { return x.slot < y.slot; });
    return v;
  };
  return sorted(a.args) == sorted(want.args) ? 1.0 : 0.5;
}

inline StructuredAction random_valid_call(const ToolCatalog& cat, int tool, Rng& rng) {
  StructuredAction a{tool, {}, ""};
  const auto& slots = cat.tools[tool].slots;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const int dom = static_cast<int>(slots[s].domain.size());
    a.args.push_back({static_cast<int>(s), std::uniform_int_distribution<int>(0, dom - 1)(rng)});
  }
  return a;
}

// Near-oracle cloud model. Errors keep the schema intact: one slot gets a different in-domain
// value, or, for slotless calls, a different available tool is called.
inline StructuredAction cloud_oracle(const ToolCatalog& cat, const Task& task, const Context& ctx,
                                     double p_correct, Rng& rng) {
  if (!(p_correct >= 0.0 && p_correct <= 1.0)) throw UsageError("cloud_oracle: p_correct outside [0,1]");
  StructuredAction a = task.expected(ctx.k);
  const bool correct = uniform01(rng) < p_correct;
  if (!correct) {
    if (!a.args.empty()) {
      const int which = std::uniform_int_distribution<int>(0, static_cast<int>(a.args.size()) - 1)(rng);
      auto& arg = a.args[which];
      const int dom = static_cast<int>(cat.tools[a.tool].slots[arg.slot].domain.size());
      const int shift = std::uniform_int_distribution<int>(1, dom - 1)(rng);
      arg.value = (arg.value + shift) % dom;
    } else {
      std::vector<int> others;
      for (int t : task.tools)
        if (t != a.tool) others.push_back(t);
      if (!others.empty()) {
        const int t = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
        a = random_valid_call(cat, t, rng);
      }
    }
  }
  a.thought = "plan step " + std::to_string(ctx.k + 1) + " of " + std::to_string(task.target_len());
  return a;
}

struct TaskGenConfig {
  int count = 1000;
  int tools_min = 10;
  int tools_max = 20;
  int target_len_min = 1;
  int target_len_max = 8;
  int prior_min = 0;
  int prior_max = 8;
  double p_dev = 0.15;        // chance a step leaves the canonical successor chain
  double p_canonical = 0.9;   // chance a predictable slot takes its canonical value
  std::uint64_t seed = 1;
  int id_offset = 0;
};

inline void validate(const TaskGenConfig& c, const ToolCatalog& cat) {
  if (c.count < 1) throw UsageError("task count must be at least 1");
  if (c.tools_min < 1 || c.tools_min > c.tools_max || c.tools_max > cat.size())
    throw UsageError("invalid tool range");
  if (c.target_len_min < 1 || c.target_len_min > c.target_len_max || c.target_len_max > kStepCap)
    throw UsageError("invalid target length range");
  if (c.prior_min < 0 || c.prior_min > c.prior_max) throw UsageError("invalid prior step range");
  if (!(c.p_dev >= 0.0 && c.p_dev <= 1.0) || !(c.p_canonical >= 0.0 && c.p_canonical <= 1.0))
    throw UsageError("task probabilities must be in [0,1]");
  if (c.target_len_max - 1 + c.prior_max + 1 > c.tools_max)
    throw UsageError("tool range too small for the longest plan");
}

inline int next_plan_tool(const ToolCatalog& cat, int prev, double p_dev, Rng& rng) {
  const int canonical = cat.successor[prev];
  if (uniform01(rng) >= p_dev) return canonical;
  int t;
  do {
    t = std::uniform_int_distribution<int>(1, cat.size() - 1)(rng);
  } while (t == prev && cat.size() > 2);
  return t;
}

inline std::vector<Task> generate_tasks(const ToolCatalog& cat, const TaskGenConfig& cfg) {
  validate(cfg, cat);
  std::vector<Task> tasks;
  tasks.reserve(cfg.count);
  for (int i = 0; i < cfg.count; ++i) {
    Rng rng = stream_rng(cfg.seed, {0x7461736bULL, static_cast<std::uint64_t>(i)});
    Task task;
    task.id = cfg.id_offset + i;
    const int len = std::uniform_int_distribution<int>(cfg.target_len_min, cfg.target_len_max)(rng);
    const int n_prior = std::uniform_int_distribution<int>(cfg.prior_min, cfg.prior_max)(rng);
    const int n_tools = std::uniform_int_distribution<int>(cfg.tools_min, cfg.tools_max)(rng);
    const int bucket = length_bucket(len);
    int prev = cat.start_state();
    for (int j = 0; j < n_prior; ++j) {
      prev = next_plan_tool(cat, prev, cfg.p_dev, rng);
      task.prior_steps.push_back(prev);
    }
    std::string params;
    for (int j = 0; j + 1 < len; ++j) {
      prev = next_plan_tool(cat, prev, cfg.p_dev, rng);
      StructuredAction a{prev, {}, ""};
      const auto& slots = cat.tools[prev].slots;
      for (std::size_t s = 0; s < slots.size(); ++s) {
        const int dom = static_cast<int>(slots[s].domain.size());
        int v;
        if (slots[s].predictable && uniform01(rng) < cfg.p_canonical)
          v = cat.canonical[prev][s][bucket];
        else
          v = std::uniform_int_distribution<int>(0, dom - 1)(rng);
        a.args.push_back({static_cast<int>(s), v});
        if (!slots[s].predictable) params += " " + slots[s].name + "=" + slots[s].domain[v];
      }
      task.target.push_back(std::move(a));
    }
    task.target.push_back({kFinishTool, {}, ""});

    std::vector<int> avail{kFinishTool};
    for (const auto& a : task.target) avail.push_back(a.tool);
    for (int t : task.prior_steps) avail.push_back(t);
    std::sort(avail.begin(), avail.end());
    avail.erase(std::unique(avail.begin(), avail.end()), avail.end());
    std::vector<int> rest;
    for (int t = 0; t < cat.size(); ++t)
      if (!std::binary_search(avail.begin(), avail.end(), t)) rest.push_back(t);
    std::shuffle(rest.begin(), rest.end(), rng);
    for (std::size_t r = 0; static_cast<int>(avail.size()) < n_tools && r < rest.size(); ++r) avail.push_back(rest[r]);
    std::sort(avail.begin(), avail.end());
    task.tools = std::move(avail);

    task.query = "request " + std::to_string(task.id) + ": run a " + std::to_string(len - 1) +
                 "-step network workflow" + (params.empty() ? "" : " with" + params);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

inline nlohmann::json action_to_json(const ToolCatalog& cat, const StructuredAction& a) {
  nlohmann::json args = nlohmann::json::object();
  for (const auto& arg : a.args) {
    const auto& slot = cat.tools[a.tool].slots.at(arg.slot);
    args[slot.name] = slot.domain.at(arg.value);
  }
  return {{"name", cat.tools.at(a.tool).name}, {"args", args}};
}

inline StructuredAction action_from_json(const ToolCatalog& cat, const nlohmann::json& j) {
  StructuredAction a;
  a.tool = cat.find(j.at("name").get<std::string>());
  if (a.tool < 0) throw UsageError("corpus: unknown tool " + j.at("name").dump());
  const auto& slots = cat.tools[a.tool].slots;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    const auto& v = j.at("args").at(slots[s].name).get<std::string>();
    auto it = std::find(slots[s].domain.begin(), slots[s].domain.end(), v);
    if (it == slots[s].domain.end()) throw UsageError("corpus: value '" + v + "' outside domain");
    a.args.push_back({static_cast<int>(s), static_cast<int>(it - slots[s].domain.begin())});
  }
  if (j.at("args").size() != slots.size()) throw UsageError("corpus: extra arguments");
  return a;
}

inline void write_corpus_jsonl(std::ostream& out, const ToolCatalog& cat, const std::vector<Task>& tasks) {
  for (const auto& t : tasks) {
    nlohmann::json j;
    j["id"] = t.id;
    j["query"] = t.query;
    std::vector<std::string> names;
    for (int id : t.tools) names.push_back(cat.tools[id].name);
    j["available_tools"] = names;
    nlohmann::json target = nlohmann::json::array();
    for (const auto& a : t.target) target.push_back(action_to_json(cat, a));
    j["target"] = target;
    std::vector<std::string> prior;
    for (int id : t.prior_steps) prior.push_back(cat.tools[id].name);
    j["prior_steps"] = prior;
    out << j.dump() << '\n';
  }
}

inline std::vector<Task> read_corpus_jsonl(std::istream& in, const ToolCatalog& cat) {
  std::vector<Task> tasks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Task t;
      t.id = j.at("id").get<int>();
      t.query = j.at("query").get<std::string>();
      for (const auto& n : j.at("available_tools")) {
        const int id = cat.find(n.get<std::string>());
        if (id < 0) throw UsageError("corpus: unknown tool " + n.dump());
        t.tools.push_back(id);
      }
      std::sort(t.tools.begin(), t.tools.end());
      for (const auto& a : j.at("target")) t.target.push_back(action_from_json(cat, a));
      for (const auto& n : j.at("prior_steps")) {
        const int id = cat.find(n.get<std::string>());
        if (id < 0) throw UsageError("corpus: unknown tool " + n.dump());
        t.prior_steps.push_back(id);
      }
      if (t.target.empty() || t.target.back().tool != kFinishTool)
        throw UsageError("corpus: target must end with finish");
      tasks.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("corpus: malformed line: ") + e.what());
    }
  }
  return tasks;
}

// Linear softmax edge agent. One categorical head over the available tools plus an explicit
// malformed pseudo-action, and one categorical head per (tool, slot).
class EdgePolicy {
 public:
  struct Obs {
    std::vector<int> available;
    int last_tool = 0;
    double progress = 0.0;
    int bucket = 0;
  };

  // tool == malformed() selects the pseudo-action; values are per declared slot.
  struct Decision {
    int tool = kFinishTool;
    std::vector<int> values;

    friend bool operator==(const Decision&, const Decision&) = default;
  };

  explicit EdgePolicy(const ToolCatalog& cat) {
    n_tools_ = cat.size();
    dim_ = (n_tools_ + 1) + 1 + kLengthBuckets + 1;
    std::size_t off = static_cast<std::size_t>(n_tools_ + 1) * dim_;
    slot_offset_.resize(n_tools_);
    slot_domain_.resize(n_tools_);
    for (int t = 0; t < n_tools_; ++t) {
      for (const auto& s : cat.tools[t].slots) {
        slot_offset_[t].push_back(off);
        slot_domain_[t].push_back(static_cast<int>(s.domain.size()));
        off += s.domain.size() * dim_;
      }
    }
    params_.assign(off, 0.0);
  }

  int malformed() const { return n_tools_; }
  int dim() const { return dim_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t tool_row(int t) const { return static_cast<std::size_t>(t) * dim_; }
  std::size_t slot_row(int t, int s, int v) const { return slot_offset_[t][s] + static_cast<std::size_t>(v) * dim_; }
  int slot_count(int t) const { return static_cast<int>(slot_domain_[t].size()); }
  int slot_domain(int t, int s) const { return slot_domain_[t][s]; }

  static Obs observe(const Task& task, const Context& ctx, int start_state) {
    Obs o;
    o.available = task.tools;
    o.last_tool = ctx.last_tool(start_state);
    const int len = task.target_len();
    o.progress = len <= 1 ? 1.0 : std::min(2.0, static_cast<double>(ctx.k) / (len - 1));
    o.bucket = task.bucket();
    return o;
  }

  // Sparse feature encoding: (index, value) pairs.
  std::vector<std::pair<int, double>> features(const Obs& o) const {
    return {{o.last_tool, 1.0}, {n_tools_ + 1, o.progress}, {n_tools_ + 2 + o.bucket, 1.0}, {dim_ - 1, 1.0}};
  }

  double dot(std::size_t row, const std::vector<std::pair<int, double>>& x) const {
    double z = 0.0;
    for (auto [i, v] : x) z += params_[row + i] * v;
    return z;
  }

  // Candidate order: available tools ascending, then malformed.
  std::vector<int> tool_candidates(const Obs& o) const {
    std::vector<int> c = o.available;
    c.push_back(malformed());
    return c;
  }

  std::vector<double> tool_probs(const Obs& o) const { return softmax_rows(tool_rows(o), features(o)); }

  std::vector<double> slot_probs(const Obs& o, int tool, int slot) const {
    std::vector<std::size_t> rows;
    for (int v = 0; v < slot_domain(tool, slot); ++v) rows.push_back(slot_row(tool, slot, v));
    return softmax_rows(rows, features(o));
  }

  double malformed_prob(const Obs& o) const { return tool_probs(o).back(); }

  Decision sample(const Obs& o, Rng& rng, double* log_prob = nullptr) const {
    const auto cand = tool_candidates(o);
    const auto tp = tool_probs(o);
    const std::size_t ti = sample_categorical(tp, rng);
    Decision d{cand[ti], {}};
    double lp = std::log(tp[ti]);
    if (d.tool != malformed()) {
      for (int s = 0; s < slot_count(d.tool); ++s) {
        const auto sp = slot_probs(o, d.tool, s);
        const std::size_t v = sample_categorical(sp, rng);
        d.values.push_back(static_cast<int>(v));
        lp += std::log(sp[v]);
      }
    }
    if (log_prob) *log_prob = lp;
    return d;
  }

  double log_prob(const Obs& o, const Decision& d) const {
    const auto cand = tool_candidates(o);
    const auto it = std::find(cand.begin(), cand.end(), d.tool);
    if (it == cand.end()) return -std::numeric_limits<double>::infinity();
    double lp = std::log(tool_probs(o)[it - cand.begin()]);
    if (d.tool != malformed())
      for (int s = 0; s < slot_count(d.tool); ++s) lp += std::log(slot_probs(o, d.tool, s)[d.values.at(s)]);
    return lp;
  }

  // grad += w * d log pi(d|o) / d theta
  void grad_log_prob(const Obs& o, const Decision& d, double w, std::vector<double>& grad) const {
    const auto x = features(o);
    const auto cand = tool_candidates(o);
    const auto tp = tool_probs(o);
    for (std::size_t i = 0; i < cand.size(); ++i)
      add_row(grad, tool_row(cand[i]), x, w * ((cand[i] == d.tool ? 1.0 : 0.0) - tp[i]));
    if (d.tool == malformed()) return;
    for (int s = 0; s < slot_count(d.tool); ++s) {
      const auto sp = slot_probs(o, d.tool, s);
      for (int v = 0; v < slot_domain(d.tool, s); ++v)
        add_row(grad, slot_row(d.tool, s, v), x, w * ((v == d.values[s] ? 1.0 : 0.0) - sp[v]));
    }
  }

  // Exact KL(this || other) of the factorized action distribution.
  double kl(const Obs& o, const EdgePolicy& other) const {
    const auto cand = tool_candidates(o);
    const auto p = tool_probs(o);
    const auto q = other.tool_probs(o);
    double total = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      if (p[i] <= 0.0) continue;
      total += p[i] * (std::log(p[i]) - std::log(q[i]) + slot_kl(o, other, cand[i]));
    }
    return total;
  }

  // grad += w * d KL(this || other) / d theta_this
  void grad_kl(const Obs& o, const EdgePolicy& other, double w, std::vector<double>& grad) const {
    const auto x = features(o);
    const auto cand = tool_candidates(o);
    const auto p = tool_probs(o);
    const auto q = other.tool_probs(o);
    std::vector<double> g(cand.size());
    double g_bar = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      g[i] = std::log(p[i]) - std::log(q[i]) + slot_kl(o, other, cand[i]);
      g_bar += p[i] * g[i];
    }
    for (std::size_t i = 0; i < cand.size(); ++i) {
      add_row(grad, tool_row(cand[i]), x, w * p[i] * (g[i] - g_bar));
      const int t = cand[i];
      if (t == malformed()) continue;
      for (int s = 0; s < slot_count(t); ++s) {
        const auto ps = slot_probs(o, t, s);
        const auto qs = other.slot_probs(o, t, s);
        double k = 0.0;
        for (std::size_t v = 0; v < ps.size(); ++v) k += ps[v] * (std::log(ps[v]) - std::log(qs[v]));
        for (int v = 0; v < slot_domain(t, s); ++v)
          add_row(grad, slot_row(t, s, v), x, w * p[i] * ps[v] * (std::log(ps[v]) - std::log(qs[v]) - k));
      }
    }
  }

  // grad += w * d KL(ref || this) / d theta_this
  void grad_forward_kl(const Obs& o, const EdgePolicy& ref, double w, std::vector<double>& grad) const {
    const auto x = features(o);
    const auto cand = tool_candidates(o);
    const auto p = tool_probs(o);
    const auto r = ref.tool_probs(o);
    for (std::size_t i = 0; i < cand.size(); ++i) {
      add_row(grad, tool_row(cand[i]), x, w * (p[i] - r[i]));
      const int t = cand[i];
      if (t == malformed() || r[i] <= 0.0) continue;
      for (int s = 0; s < slot_count(t); ++s) {
        const auto ps = slot_probs(o, t, s);
        const auto rs = ref.slot_probs(o, t, s);
        for (int v = 0; v < slot_domain(t, s); ++v) add_row(grad, slot_row(t, s, v), x, w * r[i] * (ps[v] - rs[v]));
      }
    }
  }

  double forward_kl(const Obs& o, const EdgePolicy& ref) const { return ref.kl(o, *this); }

  // The malformed pseudo-action is the greedy call with an undeclared extra argument appended.
  StructuredAction realize(const Obs& o, const Decision& d) const {
    StructuredAction a;
    if (d.tool != malformed()) {
      a.tool = d.tool;
      for (int s = 0; s < slot_count(d.tool); ++s) a.args.push_back({s, d.values[s]});
      a.thought = "edge step";
      return a;
    }
    const auto tp = tool_probs(o);
    std::size_t best = 0;
    for (std::size_t i = 1; i + 1 < tp.size(); ++i)
      if (tp[i] > tp[best]) best = i;
    a.tool = o.available[best];
    for (int s = 0; s < slot_count(a.tool); ++s) {
      const auto sp = slot_probs(o, a.tool, s);
      a.args.push_back({s, static_cast<int>(std::max_element(sp.begin(), sp.end()) - sp.begin())});
    }
    a.args.push_back({-1, 0});
    a.thought = "edge step (unstructured)";
    return a;
  }

  static Decision decision_of(const StructuredAction& a) {
    Decision d{a.tool, {}};
    for (const auto& arg : a.args)
      if (arg.slot >= 0) d.values.resize(std::max<std::size_t>(d.values.size(), arg.slot + 1));
    for (const auto& arg : a.args)
      if (arg.slot >= 0) d.values[arg.slot] = arg.value;
    return d;
  }

 private:
  std::vector<std::size_t> tool_rows(const Obs& o) const {
    std::vector<std::size_t> rows;
    rows.reserve(o.available.size() + 1);
    for (int t : o.available) rows.push_back(tool_row(t));
    rows.push_back(tool_row(malformed()));
    return rows;
  }

  std::vector<double> softmax_rows(const std::vector<std::size_t>& rows,
                                   const std::vector<std::pair<int, double>>& x) const {
    std::vector<double> z(rows.size());
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      z[i] = dot(rows[i], x);
      zmax = std::max(zmax, z[i]);
    }
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - zmax);
      sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
  }

  double slot_kl(const Obs& o, const EdgePolicy& other, int t) const {
    if (t == malformed()) return 0.0;
    double total = 0.0;
    for (int s = 0; s < slot_count(t); ++s) {
      const auto p = slot_probs(o, t, s);
      const auto q = other.slot_probs(o, t, s);
      for (std::size_t v = 0; v < p.size(); ++v)
        if (p[v] > 0.0) total += p[v] * (std::log(p[v]) - std::log(q[v]));
    }
    return total;
  }

  static void add_row(std::vector<double>& grad, std::size_t row, const std::vector<std::pair<int, double>>& x,
                      double w) {
    for (auto [i, v] : x) grad[row + i] += w * v;
  }

  int n_tools_ = 0;
  int dim_ = 0;
  std::vector<std::vector<std::size_t>> slot_offset_;
  std::vector<std::vector<int>> slot_domain_;
  std::vector<double> params_;
};

struct SupervisedStep {
  EdgePolicy::Obs obs;
  EdgePolicy::Decision target;
};

// Teacher-forced (observation, target decision) pairs along each task's plan.
inline std::vector<SupervisedStep> supervised_steps(const ToolCatalog& cat, const std::vector<Task>& tasks) {
  std::vector<SupervisedStep> out;
  for (const auto& task : tasks) {
    Context ctx = initial_context(task);
    for (const auto& a : task.target) {
      out.push_back({EdgePolicy::observe(task, ctx, cat.start_state()), EdgePolicy::decision_of(a)});
      ctx = update_context(ctx, Venue::Edge, a.tool, "");
    }
  }
  return out;
}

struct SftConfig {
  int epochs = 10;
  double lr = 0.5;
  int batch = 64;
  std::uint64_t seed = 0;
};

// Mini-batch gradient ascent on the log-likelihood of target decisions.
inline void sft_train(EdgePolicy& policy, const std::vector<SupervisedStep>& data, const SftConfig& cfg) {
  if (data.empty()) throw UsageError("sft_train: empty dataset");
  Rng rng = stream_rng(cfg.seed, {0x736674ULL});
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> grad(policy.params().size());
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      std::fill(grad.begin(), grad.end(), 0.0);
      const double w = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) policy.grad_log_prob(data[order[k]].obs, data[order[k]].target, w, grad);
      auto& p = policy.params();
      for (std::size_t i = 0; i < p.size(); ++i) p[i] += cfg.lr * grad[i];
    }
  }
}

}  // namespace netroute
