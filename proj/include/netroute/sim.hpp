#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "netroute/common.hpp"
#include "netroute/controllers.hpp"
#include "netroute/econ.hpp"
#include "netroute/learning.hpp"
#include "netroute/net_model.hpp"
#include "netroute/theory.hpp"
#include "netroute/toyworld.hpp"

namespace netroute {

enum class ControllerKind { Fixed, FuncDyn, PolicyNet, AllEdge, AllCloud, OneshotRouter, FixedCascade };

inline const char* controller_name(ControllerKind k) {
  switch (k) {
    case ControllerKind::Fixed: return "fixed";
    case ControllerKind::FuncDyn: return "funcdyn";
    case ControllerKind::PolicyNet: return "policynet";
    case ControllerKind::AllEdge: return "all-edge";
    case ControllerKind::AllCloud: return "all-cloud";
    case ControllerKind::OneshotRouter: return "oneshot-router";
    case ControllerKind::FixedCascade: return "fixed-cascade";
  }
  return "?";
}

inline ControllerKind parse_controller(const std::string& s) {
  for (auto k : {ControllerKind::Fixed, ControllerKind::FuncDyn, ControllerKind::PolicyNet, ControllerKind::AllEdge,
                 ControllerKind::AllCloud, ControllerKind::OneshotRouter, ControllerKind::FixedCascade})
    if (s == controller_name(k)) return k;
  throw UsageError("unknown controller '" + s + "'");
}

enum class Recalibration { None, Calibration };

// Network states are addressed by (task position, step), so every controller sees the same
// state at the same point of the corpus.
class TraceCursor {
 public:
  explicit TraceCursor(Trace trace) : trace_(std::move(trace)) {}

  const TraceStep& at(std::size_t task_pos, int step) const {
    const std::size_t i = task_pos * kStepCap + static_cast<std::size_t>(step);
    if (i >= trace_.size())
      throw RuntimeFailure("trace exhausted: step " + std::to_string(i) + " requested but the trace has " +
                           std::to_string(trace_.size()) + " states (" + std::to_string(i + 1 - trace_.size()) +
                           " short)");
    return trace_[i];
  }
  std::size_t size() const { return trace_.size(); }
  const Trace& trace() const { return trace_; }

 private:
  Trace trace_;
};

inline std::size_t trace_steps_for(std::size_t tasks) { return tasks * kStepCap; }

// Segments of `tasks_per_segment` tasks cycling through the given regimes.
inline std::vector<ScheduleSegment> interleaved_schedule(std::size_t tasks, std::size_t tasks_per_segment,
                                                         const std::vector<std::string>& regimes) {
  if (regimes.empty() || tasks_per_segment == 0) throw UsageError("interleaved schedule needs regimes and a segment length");
  std::vector<ScheduleSegment> sched;
  for (std::size_t done = 0, r = 0; done < tasks; done += tasks_per_segment, ++r) {
    const std::size_t n = std::min(tasks_per_segment, tasks - done);
    sched.push_back({regimes[r % regimes.size()], static_cast<int>(n * kStepCap)});
  }
  return sched;
}

struct EconParams {
  LatencyParams latency;
  CostParams cost;
  long tokens_base = 400;
  long tokens_per_entry = 100;
};

inline long cloud_tokens(const EconParams& e, const Context& ctx) {
  return e.tokens_base + e.tokens_per_entry * static_cast<long>(ctx.completed.size());
}

struct WorldConfig {
  CatalogConfig catalog;
  TaskGenConfig tasks;           // template for evaluation corpora
  double p_correct = 0.98;
  std::uint64_t bootstrap_seed = 20240601;
  int sft_tasks = 400;
  SftConfig sft;
  int rm_tasks = 150;
  RmTrainConfig rm;
  int calibration_tasks = 800;
  std::size_t calibration_segment = 50;
  bool policynet = true;
  TrainHyper policynet_train;
  FuncDynParams funcdyn;         // tau0 here is ignored; it is centered on the calibrated threshold
  DriftParams drift;
  RegimeTable regimes;           // must define GOOD, MID and BAD for the calibration window
};

// One step evaluated on both branches.
struct BranchOutcome {
  double q = 0.0;
  double c = 0.0;
  double latency = 0.0;
  long tokens = 0;
  bool valid = true;
};

struct CalibrationRecord {
  RmContext ctx;
  StructuredAction edge_action;
  BranchOutcome edge;
  BranchOutcome cloud;
  int plan_len = 1;
  NetworkState state;
  double q_hat = 0.5;
};

inline double marginal_utility(const BranchOutcome& b, int plan_len, double lambda) {
  return b.q / static_cast<double>(plan_len) - lambda * b.c;
}

struct Thresholds {
  double tau0 = 0.0;
  double funcdyn_tau0 = 0.0;
};

struct Bootstrap {
  WorldConfig world;
  EconParams econ;
  ToolCatalog catalog;
  EdgePolicy sft_policy;
  RewardModel rm;
  std::vector<AnchorSample<EdgePolicy>> anchor_set;
  std::vector<CalibrationRecord> calibration;
  Thresholds thresholds;
  Range score_range;
  double score_std = 1.0;
  std::optional<PolicyNet> policynet;
  TrainResult policynet_fit;
};

inline BranchOutcome evaluate_branch(const ToolCatalog& cat, const EconParams& econ, const Task& task,
                                     const Context& ctx, Venue venue, const StructuredAction& a,
                                     const NetworkState& state) {
  BranchOutcome b;
  b.valid = validate_schema(cat, a, task);
  b.q = step_quality(b.valid, evaluate_quality(a, task, ctx.k));
  b.latency = step_latency(venue, econ.latency, state);
  b.tokens = venue == Venue::Cloud ? cloud_tokens(econ, ctx) : 0;
  b.c = step_cost(b.latency, static_cast<double>(b.tokens), econ.cost);
  return b;
}

namespace stream {
inline constexpr std::uint64_t kEdge = 0x65646765;
inline constexpr std::uint64_t kCloud = 0x636c6f7564;
inline constexpr std::uint64_t kRoute = 0x726f757465;
inline constexpr std::uint64_t kNear = 0x6e656172;
}  // namespace stream

inline Thresholds calibrate_thresholds(const std::vector<CalibrationRecord>& calib, const RewardModel& rm,
                                       const FuncDynParams& fd, double lambda) {
  std::vector<Tau0Record> recs;
  std::vector<NetworkState> states;
  std::vector<double> q_hats;
  recs.reserve(calib.size());
  for (const auto& c : calib) {
    recs.push_back({rm.score(c.ctx, c.edge_action), marginal_utility(c.edge, c.plan_len, lambda),
                    marginal_utility(c.cloud, c.plan_len, lambda)});
    states.push_back(c.state);
    q_hats.push_back(c.q_hat);
  }
  Thresholds th;
  th.tau0 = empirical_tau0(recs).tau0;
  th.funcdyn_tau0 = funcdyn_centered_tau0(fd, states, q_hats, th.tau0);
  return th;
}

inline std::vector<double> calibration_scores(const Bootstrap& boot, const RewardModel& rm) {
  std::vector<double> s;
  for (const auto& c : boot.calibration) s.push_back(rm.score(c.ctx, c.edge_action));
  return s;
}

inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw UsageError("quantile of empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(xs.size() - 1, lo + 1);
  return xs[lo] + (pos - lo) * (xs[hi] - xs[lo]);
}

// Default threshold grid: evenly spaced between the 1% and 99% calibration score quantiles.
inline std::vector<double> auto_tau_grid(const Bootstrap& boot, int nodes) {
  const auto s = calibration_scores(boot, boot.rm);
  return linspace(quantile(s, 0.01), quantile(s, 0.99), nodes);
}

struct PolicyNetDataset {
  PolicyNetNorm norm;
  std::vector<PolicyFeatures> features;
  std::vector<PairedOutcome> paired;  // per-step marginal quality and cost of both branches
};

// Features and paired outcomes of every calibration step, scored by the bootstrap reward model.
inline PolicyNetDataset policynet_dataset(const Bootstrap& boot) {
  PolicyNetDataset d;
  d.norm.net = boot.world.funcdyn.norm;
  d.norm.score = boot.score_range;
  for (const auto& c : boot.calibration) {
    const double s = boot.rm.score(c.ctx, c.edge_action);
    d.features.push_back(policy_features(d.norm, c.state, s, c.q_hat));
    d.paired.push_back({c.edge.q / c.plan_len, c.edge.c, c.cloud.q / c.plan_len, c.cloud.c});
  }
  return d;
}

inline Bootstrap make_bootstrap(const WorldConfig& world, const EconParams& econ) {
  Bootstrap boot{world, econ, make_catalog(world.catalog), EdgePolicy(make_catalog(world.catalog)),
                 RewardModel(make_catalog(world.catalog)), {}, {}, {}, {}, 1.0, std::nullopt, {}};
  const auto& cat = boot.catalog;
  const std::uint64_t seed = world.bootstrap_seed;

  // Supervised edge policy on a small teacher-forced set.
  TaskGenConfig tg = world.tasks;
  tg.count = world.sft_tasks;
  tg.seed = seed ^ 0x5f7ULL;
  tg.id_offset = 1'000'000;
  const auto sft_tasks = generate_tasks(cat, tg);
  const auto sft_data = supervised_steps(cat, sft_tasks);
  SftConfig sft = world.sft;
  sft.seed = seed;
  sft_train(boot.sft_policy, sft_data, sft);
  for (const auto& d : sft_data) boot.anchor_set.push_back({d.obs, d.target});

  // Initial reward model from (cloud, edge) pairs along cloud-routed rollouts.
  tg.count = world.rm_tasks;
  tg.seed = seed ^ 0x7a3ULL;
  tg.id_offset = 2'000'000;
  const auto rm_tasks = generate_tasks(cat, tg);
  std::vector<PreferencePair> pairs;
  for (const auto& task : rm_tasks) {
    Context ctx = initial_context(task);
    for (int k = 0; k < kStepCap; ++k) {
      Rng er = stream_rng(seed, {stream::kEdge, static_cast<std::uint64_t>(task.id), static_cast<std::uint64_t>(k)});
      Rng cr = stream_rng(seed, {stream::kCloud, static_cast<std::uint64_t>(task.id), static_cast<std::uint64_t>(k)});
      const auto obs = EdgePolicy::observe(task, ctx, cat.start_state());
      const auto edge = boot.sft_policy.realize(obs, boot.sft_policy.sample(obs, er));
      const auto cloud = cloud_oracle(cat, task, ctx, world.p_correct, cr);
      if (!edge.same_call(cloud))
        pairs.push_back({rm_context(cat, task, ctx), cloud, edge, true, validate_schema(cat, edge, task)});
      ctx = update_context(ctx, Venue::Cloud, cloud.tool, action_summary(cat, cloud));
      if (cloud.tool == kFinishTool) break;
    }
  }
  if (pairs.empty()) throw RuntimeFailure("bootstrap produced no preference pairs");
  RmTrainConfig rmc = world.rm;
  rmc.seed = seed;
  rm_train(boot.rm, pairs, rmc);

  // Calibration window: random routing with both branches evaluated at every step.
  tg.count = world.calibration_tasks;
  tg.seed = seed ^ 0xca1ULL;
  tg.id_offset = 3'000'000;
  const auto cal_tasks = generate_tasks(cat, tg);
  const auto trace = make_trace(interleaved_schedule(cal_tasks.size(), world.calibration_segment, {"GOOD", "MID", "BAD"}),
                                world.drift, seed, world.regimes);
  const TraceCursor cursor(trace);
  double q_hat = 0.5;
  std::vector<double> scores;
  for (std::size_t ti = 0; ti < cal_tasks.size(); ++ti) {
    const auto& task = cal_tasks[ti];
    Context ctx = initial_context(task);
    for (int k = 0; k < kStepCap; ++k) {
      const auto tid = static_cast<std::uint64_t>(task.id), kk = static_cast<std::uint64_t>(k);
      Rng er = stream_rng(seed, {stream::kEdge, tid, kk});
      Rng cr = stream_rng(seed, {stream::kCloud, tid, kk});
      Rng rr = stream_rng(seed, {stream::kRoute, tid, kk});
      const auto obs = EdgePolicy::observe(task, ctx, cat.start_state());
      const auto edge = boot.sft_policy.realize(obs, boot.sft_policy.sample(obs, er));
      const auto cloud = cloud_oracle(cat, task, ctx, world.p_correct, cr);
      const auto& state = cursor.at(ti, k).state;
      CalibrationRecord rec;
      rec.ctx = rm_context(cat, task, ctx);
      rec.edge_action = edge;
      rec.edge = evaluate_branch(cat, econ, task, ctx, Venue::Edge, edge, state);
      rec.cloud = evaluate_branch(cat, econ, task, ctx, Venue::Cloud, cloud, state);
      rec.plan_len = task.target_len();
      rec.state = state;
      rec.q_hat = q_hat;
      const double s = boot.rm.score(rec.ctx, edge);
      scores.push_back(s);
      const Venue v = uniform01(rr) < 0.5 ? Venue::Edge : Venue::Cloud;
      const auto& executed = v == Venue::Edge ? edge : cloud;
      const double q = v == Venue::Edge ? rec.edge.q : rec.cloud.q;
      boot.calibration.push_back(std::move(rec));
      q_hat = (1.0 - 0.2) * q_hat + 0.2 * q;
      ctx = update_context(ctx, v, executed.tool, v == Venue::Cloud ? action_summary(cat, executed) : "");
      if (executed.tool == kFinishTool) break;
    }
  }
  boot.score_range = {*std::min_element(scores.begin(), scores.end()), *std::max_element(scores.begin(), scores.end())};
  boot.score_std = std::sqrt(variance_of(scores));
  boot.thresholds = calibrate_thresholds(boot.calibration, boot.rm, world.funcdyn, econ.cost.lambda);

  if (world.policynet) {
    const auto data = policynet_dataset(boot);
    PolicyNet net;
    net.norm() = data.norm;
    net.init_random(seed);
    TrainHyper h = world.policynet_train;
    h.seed = seed;
    boot.policynet_fit = policynet_train(net, data.features, policynet_labels(data.paired, econ.cost.lambda), h);
    boot.policynet = std::move(net);
  }
  return boot;
}

struct StepRecord {
  int task = 0;
  int step = 0;
  double score = 0.0;
  double threshold = 0.0;  // tau, or the cloud probability for PolicyNet
  Venue decision = Venue::Edge;
  std::string regime;
  NetworkState state;
  double latency = 0.0;
  long tokens = 0;
  double cost = 0.0;
  double quality = 0.0;
  bool schema_ok = true;
  bool edge_valid = true;
  double malformed_prob = 0.0;
  bool has_counterfactual = false;
  bool cloud_better = false;
  double j_edge = 0.0;
  double j_cloud = 0.0;
};

struct RegimeMetrics {
  std::size_t tasks = 0;
  std::size_t steps = 0;
  double mean_j = 0.0;
  double mean_q = 0.0;
  double mean_c = 0.0;
  double offload_rate = 0.0;
};

struct MetricsSummary {
  std::size_t tasks = 0;
  std::size_t steps = 0;
  double lambda = 10.0;
  double mean_j = 0.0;
  double mean_q = 0.0;
  double mean_c = 0.0;   // mean per-task cost
  double total_c = 0.0;
  double offload_rate = 0.0;
  double edge_rate = 0.0;
  double schema_violation_rate = 0.0;  // executed actions
  double edge_violation_rate = 0.0;    // sampled edge actions
  double mean_malformed_prob = 0.0;
  double mean_score = 0.0;
  std::map<std::string, RegimeMetrics> per_regime;
};

struct DiagnosticsRow {
  int update = 0;
  double mean_reward = 0.0;
  double kl = 0.0;
  double clip_frac = 0.0;
  double schema_rate = 0.0;
  double composite = 0.0;
  bool anchored = false;
  double tau0 = 0.0;
};

struct RunConfig {
  ControllerKind controller = ControllerKind::Fixed;
  std::optional<double> tau;    // fixed threshold; defaults to the calibrated tau0
  FuncDynParams funcdyn;        // tau0 is replaced by the centered value unless funcdyn_tau0 is set
  std::optional<double> funcdyn_tau0;
  double ewma_beta = 0.2;
  double q_hat_init = 0.5;
  bool counterfactual = true;
  bool log_steps = true;
  bool learning = false;
  int idle_period = 64;
  PpoConfig ppo;
  bool anchoring = true;
  bool rm_refresh = true;
  int rm_refresh_period = 4;    // idle windows between reward-model refreshes
  RmTrainConfig rm_refresh_cfg{0.5, 5, 64, 1e-4, 1.0, 0.2, 3, 0};
  Recalibration recalibration = Recalibration::Calibration;
  double near_delta_scale = 0.25;
  double near_fraction = 0.05;
  std::size_t cache_capacity = 10000;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(ewma_beta > 0.0 && ewma_beta <= 1.0)) throw UsageError("ewma beta must be in (0,1]");
    if (idle_period < 1) throw UsageError("idle period must be positive");
    if (rm_refresh_period < 1) throw UsageError("rm refresh period must be positive");
    if (near_delta_scale < 0.0 || !(near_fraction >= 0.0 && near_fraction <= 1.0))
      throw UsageError("invalid near-threshold sampling parameters");
    funcdyn.validate();
    ppo.validate();
  }
};

struct ExperimentResult {
  MetricsSummary metrics;
  std::vector<StepRecord> steps;
  std::vector<TaskAggregate> tasks;
  std::vector<DiagnosticsRow> diagnostics;
  EdgePolicy policy;
  RewardModel rm;
  Thresholds initial_thresholds;
  Thresholds final_thresholds;
  std::size_t rm_cache_size = 0;
  std::size_t near_threshold_uploads = 0;
};

// Streaming mean/variance.
struct Welford {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double stddev() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0; }
};

// Algorithm loop: score, route, execute, log, cache; idle-window learning when enabled.
class Simulator {
 public:
  Simulator(const Bootstrap& boot, RunConfig cfg)
      : boot_(boot), cfg_(std::move(cfg)), policy_(boot.sft_policy), rm_(boot.rm), caches_(cfg_.cache_capacity),
        trainer_(boot.sft_policy, cfg_.ppo) {
    cfg_.validate();
    thresholds_ = boot.thresholds;
    if (cfg_.funcdyn_tau0) thresholds_.funcdyn_tau0 = *cfg_.funcdyn_tau0;
    if (cfg_.controller == ControllerKind::PolicyNet && !boot.policynet)
      throw UsageError("policynet controller requested but the bootstrap has no trained PolicyNet");
  }

  void set_policy(const EdgePolicy& p) { policy_ = p; }
  void set_rm(const RewardModel& rm) { rm_ = rm; }
  void set_thresholds(const Thresholds& t) { thresholds_ = t; }
  void set_q_hat(double q) {
    q_hat_ = q;
    q_hat_set_ = true;
  }

  ExperimentResult run(const std::vector<Task>& tasks, const TraceCursor& trace) {
    ExperimentResult res{{}, {}, {}, {}, policy_, rm_, thresholds_, thresholds_, 0, 0};
    q_hat_ = q_hat_set_ ? q_hat_ : cfg_.q_hat_init;
    std::size_t window_start_rl = caches_.rl_cache.pushed();
    std::vector<std::size_t> window_edge_steps;
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
      run_episode(tasks[ti], ti, trace, res, window_edge_steps);
      if (cfg_.learning && (ti + 1) % static_cast<std::size_t>(cfg_.idle_period) == 0) {
        idle_window(res, window_start_rl, window_edge_steps);
        window_start_rl = caches_.rl_cache.pushed();
        window_edge_steps.clear();
      }
    }
    res.metrics = summarize(res.steps, res.tasks, task_regimes_, cfg_.controller, boot_.econ.cost.lambda);
    res.policy = policy_;
    res.rm = rm_;
    res.final_thresholds = thresholds_;
    res.rm_cache_size = caches_.rm_cache.size();
    if (!cfg_.log_steps) res.steps.clear();
    return res;
  }

  const Caches& caches() const { return caches_; }

 private:
  double fixed_tau() const { return cfg_.tau ? *cfg_.tau : thresholds_.tau0; }

  void run_episode(const Task& task, std::size_t task_pos, const TraceCursor& trace, ExperimentResult& res,
                   std::vector<std::size_t>& window_edge_steps) {
    const auto& cat = boot_.catalog;
    const double lambda = boot_.econ.cost.lambda;
    Context ctx = initial_context(task);
    std::vector<StepOutcome> outcomes;
    std::optional<Venue> oneshot;
    std::string regime;
    for (int k = 0; k < kStepCap; ++k) {
      const auto tid = static_cast<std::uint64_t>(task.id), kk = static_cast<std::uint64_t>(k);
      Rng er = stream_rng(cfg_.seed, {stream::kEdge, tid, kk});
      Rng cr = stream_rng(cfg_.seed, {stream::kCloud, tid, kk});
      const auto obs = EdgePolicy::observe(task, ctx, cat.start_state());
      double lp = 0.0;
      const auto decision = policy_.sample(obs, er, &lp);
      const auto edge = policy_.realize(obs, decision);
      const auto cloud = cloud_oracle(cat, task, ctx, boot_.world.p_correct, cr);
      const auto rctx = rm_context(cat, task, ctx);
      const double s = rm_.score(rctx, edge);
      const auto& ts = trace.at(task_pos, k);
      if (k == 0) regime = ts.regime;
      score_stats_.add(s);

      RouteDecision route;
      double band_tau = thresholds_.tau0;
      switch (cfg_.controller) {
        case ControllerKind::Fixed:
          route = route_fixed(s, fixed_tau());
          band_tau = fixed_tau();
          break;
        case ControllerKind::FixedCascade:
          route = route_fixed(s, thresholds_.tau0);
          break;
        case ControllerKind::FuncDyn: {
          FuncDynParams p = cfg_.funcdyn;
          p.tau0 = thresholds_.funcdyn_tau0;
          route = route_fixed(s, funcdyn_threshold(p, ts.state, q_hat_));
          band_tau = route.threshold_or_prob;
          break;
        }
        case ControllerKind::PolicyNet:
          route = boot_.policynet->route(ts.state, s, q_hat_);
          break;
        case ControllerKind::AllEdge:
          route = {Venue::Edge, s, std::numeric_limits<double>::infinity() * -1.0};
          break;
        case ControllerKind::AllCloud:
          route = {Venue::Cloud, s, std::numeric_limits<double>::infinity()};
          break;
        case ControllerKind::OneshotRouter:
          if (!oneshot) oneshot = route_fixed(s, thresholds_.tau0).choice;
          route = {*oneshot, s, thresholds_.tau0};
          break;
      }

      const auto& executed = route.choice == Venue::Edge ? edge : cloud;
      const auto out = evaluate_branch(cat, boot_.econ, task, ctx, route.choice, executed, ts.state);
      StepRecord rec;
      rec.task = task.id;
      rec.step = k;
      rec.score = s;
      rec.threshold = route.threshold_or_prob;
      rec.decision = route.choice;
      rec.regime = ts.regime;
      rec.state = ts.state;
      rec.latency = out.latency;
      rec.tokens = out.tokens;
      rec.cost = out.c;
      rec.quality = out.q;
      rec.schema_ok = out.valid;
      rec.edge_valid = decision.tool != policy_.malformed();
      rec.malformed_prob = policy_.malformed_prob(obs);
      if (cfg_.counterfactual) {
        const auto eb = route.choice == Venue::Edge ? out : evaluate_branch(cat, boot_.econ, task, ctx, Venue::Edge, edge, ts.state);
        const auto cb = route.choice == Venue::Cloud ? out : evaluate_branch(cat, boot_.econ, task, ctx, Venue::Cloud, cloud, ts.state);
        rec.has_counterfactual = true;
        rec.j_edge = marginal_utility(eb, task.target_len(), lambda);
        rec.j_cloud = marginal_utility(cb, task.target_len(), lambda);
        rec.cloud_better = rec.j_cloud > rec.j_edge;
      }
      outcomes.push_back({route.choice, out.latency, out.tokens, out.q, out.c});

      if (cfg_.learning) {
        caches_.rl_cache.push({task.id, k, obs, decision, lp, s});
        CachedTuple tup{task.id, k, rctx, edge, cloud, validate_schema(cat, edge, task), true, s, ts.state, false};
        if (route.choice == Venue::Cloud) {
          caches_.rm_cache.push(tup);
        } else if (cfg_.controller != ControllerKind::AllEdge) {
          window_candidates_.push_back({tup, band_tau});
          window_edge_steps.push_back(window_candidates_.size() - 1);
        }
      }

      q_hat_ = (1.0 - cfg_.ewma_beta) * q_hat_ + cfg_.ewma_beta * out.q;
      res.steps.push_back(std::move(rec));
      ctx = update_context(ctx, route.choice, executed.tool,
                           route.choice == Venue::Cloud ? action_summary(cat, executed) : std::string());
      if (executed.tool == kFinishTool) break;
    }
    res.tasks.push_back(task_aggregate(outcomes, lambda));
    task_regimes_.push_back(regime);
  }

  void idle_window(ExperimentResult& res, std::size_t window_start_rl, std::vector<std::size_t>& window_edge_steps) {
    ++windows_;
    // Near-threshold uploads from the accepted steps of this window.
    std::vector<std::pair<double, double>> cand;
    for (auto i : window_edge_steps) cand.push_back({window_candidates_[i].first.score, window_candidates_[i].second});
    Rng nr = stream_rng(cfg_.seed, {stream::kNear, static_cast<std::uint64_t>(windows_)});
    const double delta = cfg_.near_delta_scale * score_stats_.stddev();
    for (auto j : near_threshold_sample(cand, delta, cfg_.near_fraction, nr)) {
      auto tup = window_candidates_[window_edge_steps[j]].first;
      tup.near_threshold = true;
      caches_.rm_cache.push(tup);
      ++res.near_threshold_uploads;
    }
    window_candidates_.clear();

    // PPO on the steps collected since the last update, rewards r = s.
    const std::size_t fresh = std::min(caches_.rl_cache.pushed() - window_start_rl, caches_.rl_cache.size());
    if (fresh > 0) {
      std::vector<RlEntry> entries;
      for (std::size_t i = caches_.rl_cache.size() - fresh; i < caches_.rl_cache.size(); ++i)
        entries.push_back(caches_.rl_cache[i]);
      const auto adv = episode_advantages(entries, cfg_.ppo.gamma);
      std::vector<PpoSample<EdgePolicy>> batch;
      double reward = 0.0, valid = 0.0;
      for (std::size_t i = 0; i < entries.size(); ++i) {
        batch.push_back({entries[i].obs, entries[i].decision, entries[i].log_prob, adv[i]});
        reward += entries[i].reward;
        valid += entries[i].decision.tool != policy_.malformed() ? 1.0 : 0.0;
      }
      const auto rec = trainer_.step(policy_, batch, boot_.anchor_set, cfg_.anchoring);
      DiagnosticsRow row;
      row.update = rec.update;
      row.mean_reward = reward / entries.size();
      row.kl = rec.ppo.last.kl;
      row.clip_frac = rec.ppo.last.clip_frac;
      row.schema_rate = valid / entries.size();
      row.composite = rec.composite;
      row.anchored = rec.anchored;
      row.tau0 = thresholds_.tau0;
      res.diagnostics.push_back(row);
    }

    // Reward-model refresh, warm-started, then threshold recalibration on the new score scale.
    if (cfg_.rm_refresh && windows_ % cfg_.rm_refresh_period == 0 && !caches_.rm_cache.empty()) {
      std::vector<PreferencePair> pairs;
      for (const auto& t : caches_.rm_cache)
        if (!t.edge_action.same_call(t.cloud_action)) pairs.push_back(preference_of(t));
      if (!pairs.empty()) {
        RmTrainConfig rc = cfg_.rm_refresh_cfg;
        rc.seed = cfg_.seed ^ static_cast<std::uint64_t>(windows_);
        rm_train(rm_, pairs, rc);
        if (cfg_.recalibration == Recalibration::Calibration) {
          const auto th = calibrate_thresholds(boot_.calibration, rm_, cfg_.funcdyn, boot_.econ.cost.lambda);
          thresholds_.tau0 = th.tau0;
          if (!cfg_.funcdyn_tau0) thresholds_.funcdyn_tau0 = th.funcdyn_tau0;
        }
      }
    }
  }

 public:
  static MetricsSummary summarize(const std::vector<StepRecord>& steps, const std::vector<TaskAggregate>& tasks,
                                  const std::vector<std::string>& task_regimes, ControllerKind, double lambda) {
    MetricsSummary m;
    m.lambda = lambda;
    m.tasks = tasks.size();
    m.steps = steps.size();
    for (const auto& t : tasks) {
      m.mean_j += t.j;
      m.mean_q += t.q;
      m.total_c += t.c;
    }
    if (!tasks.empty()) {
      m.mean_j /= tasks.size();
      m.mean_q /= tasks.size();
      m.mean_c = m.total_c / tasks.size();
    }
    std::size_t cloud = 0, bad = 0, edge_bad = 0;
    for (const auto& s : steps) {
      cloud += s.decision == Venue::Cloud;
      bad += !s.schema_ok;
      edge_bad += !s.edge_valid;
      m.mean_malformed_prob += s.malformed_prob;
      m.mean_score += s.score;
    }
    if (!steps.empty()) {
      const double n = static_cast<double>(steps.size());
      m.offload_rate = cloud / n;
      m.edge_rate = 1.0 - m.offload_rate;
      m.schema_violation_rate = bad / n;
      m.edge_violation_rate = edge_bad / n;
      m.mean_malformed_prob /= n;
      m.mean_score /= n;
    }
    // Per regime, keyed by the regime at each task's first step.
    std::size_t si = 0;
    for (std::size_t ti = 0; ti < tasks.size() && ti < task_regimes.size(); ++ti) {
      auto& r = m.per_regime[task_regimes[ti]];
      ++r.tasks;
      r.mean_j += tasks[ti].j;
      r.mean_q += tasks[ti].q;
      r.mean_c += tasks[ti].c;
      const int task_id = si < steps.size() ? steps[si].task : -1;
      std::size_t n_cloud = 0, n = 0;
      while (si < steps.size() && steps[si].task == task_id) {
        n_cloud += steps[si].decision == Venue::Cloud;
        ++n;
        ++si;
      }
      r.steps += n;
      r.offload_rate += static_cast<double>(n_cloud);
    }
    for (auto& [name, r] : m.per_regime) {
      if (r.tasks) {
        r.mean_j /= r.tasks;
        r.mean_q /= r.tasks;
        r.mean_c /= r.tasks;
      }
      r.offload_rate = r.steps ? r.offload_rate / r.steps : 0.0;
    }
    return m;
  }

 private:
  const Bootstrap& boot_;
  RunConfig cfg_;
  EdgePolicy policy_;
  RewardModel rm_;
  Caches caches_;
  TwoStageTrainer<EdgePolicy> trainer_;
  Thresholds thresholds_;
  double q_hat_ = 0.5;
  bool q_hat_set_ = false;
  Welford score_stats_;
  int windows_ = 0;
  std::vector<std::pair<CachedTuple, double>> window_candidates_;
  std::vector<std::string> task_regimes_;
};

inline ExperimentResult run_experiment(const Bootstrap& boot, const RunConfig& cfg, const std::vector<Task>& tasks,
                                       const TraceCursor& trace) {
  Simulator sim(boot, cfg);
  return sim.run(tasks, trace);
}

struct CounterfactualResult {
  double j_edge = 0.0;
  double j_cloud = 0.0;
  bool edge_better = true;
};

// Both branches of one step on the same network state; ties count as edge-better.
inline CounterfactualResult counterfactual_eval(const Bootstrap& boot, const Task& task, const Context& ctx,
                                                const StructuredAction& edge, const StructuredAction& cloud,
                                                const NetworkState& state) {
  const double lambda = boot.econ.cost.lambda;
  const auto eb = evaluate_branch(boot.catalog, boot.econ, task, ctx, Venue::Edge, edge, state);
  const auto cb = evaluate_branch(boot.catalog, boot.econ, task, ctx, Venue::Cloud, cloud, state);
  CounterfactualResult r{marginal_utility(eb, task.target_len(), lambda), marginal_utility(cb, task.target_len(), lambda), true};
  r.edge_better = !(r.j_cloud > r.j_edge);
  return r;
}

struct RiskCoveragePoint {
  double tau = 0.0;
  double coverage = 0.0;
  double risk = 0.0;
};

struct ScoredFlag {
  double score = 0.0;
  bool cloud_better = false;
};

inline std::vector<RiskCoveragePoint> risk_coverage_curve(std::span<const ScoredFlag> records,
                                                          std::span<const double> tau_grid) {
  if (records.empty()) throw UsageError("risk_coverage_curve: no records");
  std::vector<RiskCoveragePoint> out;
  const double n = static_cast<double>(records.size());
  for (double tau : tau_grid) {
    std::size_t acc = 0, bad = 0;
    for (const auto& r : records) {
      if (r.score >= tau) {
        ++acc;
        bad += r.cloud_better;
      }
    }
    out.push_back({tau, acc / n, acc ? static_cast<double>(bad) / acc : 0.0});
  }
  return out;
}

// Selective risk when accepting the top round(c * N) scores, for c on an evenly spaced grid.
inline std::vector<double> risk_at_coverage(std::span<const ScoredFlag> records, int nodes) {
  if (records.empty()) throw UsageError("risk_at_coverage: no records");
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].score > records[b].score; });
  std::vector<std::size_t> prefix(records.size() + 1, 0);
  for (std::size_t i = 0; i < order.size(); ++i) prefix[i + 1] = prefix[i] + records[order[i]].cloud_better;
  std::vector<double> risk;
  for (int j = 0; j < nodes; ++j) {
    const double c = nodes == 1 ? 1.0 : static_cast<double>(j) / (nodes - 1);
    const auto k = static_cast<std::size_t>(std::llround(c * static_cast<double>(records.size())));
    risk.push_back(k ? static_cast<double>(prefix[k]) / k : 0.0);
  }
  return risk;
}

// Fraction of coverage nodes where the post curve is at or below the pre curve.
inline double matched_coverage_fraction(std::span<const double> pre, std::span<const double> post) {
  if (pre.size() != post.size() || pre.empty()) throw UsageError("risk curves must have equal nonzero length");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pre.size(); ++i) ok += post[i] <= pre[i] + 1e-12;
  return static_cast<double>(ok) / pre.size();
}

struct ScanRow {
  double lambda = 0.0;
  double tau = 0.0;
  double q = 0.0;
  double c = 0.0;
  double j = 0.0;
};

struct ScanResult {
  std::vector<ScanRow> rows;
  std::map<double, double> argmax_tau;  // per lambda, ties toward smaller tau
};

// Frozen policy and reward model; each tau runs once and serves every lambda, since only J
// depends on lambda.
inline ScanResult threshold_scan(const Bootstrap& boot, RunConfig cfg, const std::vector<Task>& tasks,
                                 const TraceCursor& trace, std::span<const double> tau_grid,
                                 std::span<const double> lambdas) {
  if (tau_grid.empty() || lambdas.empty()) throw UsageError("threshold_scan: empty grid");
  cfg.learning = false;
  cfg.controller = ControllerKind::Fixed;
  cfg.counterfactual = false;
  cfg.log_steps = false;
  std::vector<std::pair<double, double>> qc;
  for (double tau : tau_grid) {
    cfg.tau = tau;
    const auto res = run_experiment(boot, cfg, tasks, trace);
    qc.push_back({res.metrics.mean_q, res.metrics.mean_c});
  }
  ScanResult out;
  for (double lam : lambdas) {
    double best_j = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < tau_grid.size(); ++i) {
      const double j = qc[i].first - lam * qc[i].second;
      out.rows.push_back({lam, tau_grid[i], qc[i].first, qc[i].second, j});
      if (j > best_j) {
        best_j = j;
        out.argmax_tau[lam] = tau_grid[i];
      }
    }
  }
  return out;
}

// Combines scans from several seeds by averaging (q, c), then recomputes J and the argmax.
inline ScanResult average_scans(const std::vector<ScanResult>& scans) {
  if (scans.empty()) throw UsageError("average_scans: nothing to average");
  ScanResult out;
  out.rows = scans[0].rows;
  for (auto& r : out.rows) r.q = r.c = r.j = 0.0;
  for (const auto& s : scans) {
    if (s.rows.size() != out.rows.size()) throw UsageError("average_scans: mismatched scans");
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
      out.rows[i].q += s.rows[i].q / scans.size();
      out.rows[i].c += s.rows[i].c / scans.size();
    }
  }
  std::map<double, double> best;
  for (auto& r : out.rows) {
    r.j = r.q - r.lambda * r.c;
    auto it = best.find(r.lambda);
    if (it == best.end() || r.j > it->second) {
      best[r.lambda] = r.j;
      out.argmax_tau[r.lambda] = r.tau;
    }
  }
  return out;
}

inline void write_step_log_csv(std::ostream& out, const std::vector<StepRecord>& steps) {
  out << "task,step,score,threshold,decision,rtt_ms,bw_mbps,latency_s,cost,quality,schema_ok,cloud_better\n";
  for (const auto& s : steps) {
    out << s.task << ',' << s.step << ',' << format_sig(s.score) << ',' << format_sig(s.threshold) << ','
        << venue_name(s.decision) << ',' << format_sig(s.state.rtt / kMs) << ',' << format_sig(s.state.bw / kMbps)
        << ',' << format_sig(s.latency) << ',' << format_sig(s.cost) << ',' << format_sig(s.quality) << ','
        << (s.schema_ok ? 1 : 0) << ',';
    if (s.has_counterfactual) out << (s.cloud_better ? 1 : 0);
    out << '\n';
  }
}

inline nlohmann::json metrics_to_json(const MetricsSummary& m) {
  auto r9 = [](double x) { return round_sig(x); };
  nlohmann::json j{{"tasks", m.tasks},
                   {"steps", m.steps},
                   {"lambda", r9(m.lambda)},
                   {"mean_j", r9(m.mean_j)},
                   {"mean_q", r9(m.mean_q)},
                   {"mean_task_cost", r9(m.mean_c)},
                   {"total_cost", r9(m.total_c)},
                   {"offload_rate", r9(m.offload_rate)},
                   {"edge_rate", r9(m.edge_rate)},
                   {"schema_violation_rate", r9(m.schema_violation_rate)},
                   {"edge_violation_rate", r9(m.edge_violation_rate)},
                   {"mean_malformed_prob", r9(m.mean_malformed_prob)},
                   {"mean_score", r9(m.mean_score)}};
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [name, r] : m.per_regime)
    per[name] = {{"tasks", r.tasks}, {"steps", r.steps}, {"mean_j", r9(r.mean_j)}, {"mean_q", r9(r.mean_q)},
                 {"mean_task_cost", r9(r.mean_c)}, {"offload_rate", r9(r.offload_rate)}};
  j["per_regime"] = per;
  return j;
}

inline void write_diagnostics_csv(std::ostream& out, const std::vector<DiagnosticsRow>& rows) {
  out << "update,mean_reward,kl,clip_frac,schema_rate,composite\n";
  for (const auto& r : rows)
    out << r.update << ',' << format_sig(r.mean_reward) << ',' << format_sig(r.kl) << ',' << format_sig(r.clip_frac)
        << ',' << format_sig(r.schema_rate) << ',' << format_sig(r.composite) << '\n';
}

// Paired held-out evaluation of a policy under a fixed reward model and thresholds.
struct PolicyEval {
  double mean_reward = 0.0;
  double violation_rate = 0.0;  // exact probability of the malformed pseudo-action, averaged over visited steps
  double offload_rate = 0.0;
  double mean_j = 0.0;
};

inline PolicyEval evaluate_policy(const Bootstrap& boot, RunConfig cfg, const EdgePolicy& policy, const RewardModel& rm,
                                  const Thresholds& th, const std::vector<Task>& tasks, const TraceCursor& trace) {
  cfg.learning = false;
  cfg.counterfactual = false;
  Simulator sim(boot, cfg);
  sim.set_policy(policy);
  sim.set_rm(rm);
  sim.set_thresholds(th);
  const auto res = sim.run(tasks, trace);
  return {res.metrics.mean_score, res.metrics.mean_malformed_prob, res.metrics.offload_rate, res.metrics.mean_j};
}

}  // namespace netroute
