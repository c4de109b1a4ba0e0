// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any criterion fails.
// Usage: netroute_acceptance --cli <path to netroute> --work <scratch dir> [--only N]...
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "netroute/netroute.hpp"

namespace fs = std::filesystem;
using namespace netroute;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Args {
  std::string cli;
  fs::path work = "acceptance_work";
  std::set<int> only;
};

std::string fmt(double x, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << x;
  return os.str();
}

double rel_err(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

// Schema-gate bookkeeping shared by every run in the suite.
struct GateTally {
  std::size_t runs = 0;
  std::size_t steps = 0;
  std::size_t invalid = 0;
  std::size_t violations = 0;
  void add(const std::vector<StepRecord>& steps_in) {
    ++runs;
    for (const auto& s : steps_in) {
      ++steps;
      if (!s.schema_ok) {
        ++invalid;
        if (s.quality != 0.0) ++violations;
      }
    }
  }
};
GateTally g_gate;

WorldConfig small_world() {
  WorldConfig w;
  w.policynet = false;
  return w;
}

const Bootstrap& shared_bootstrap() {
  static const Bootstrap boot = make_bootstrap(small_world(), EconParams{});
  return boot;
}

std::vector<Task> corpus(const Bootstrap& boot, int count, std::uint64_t seed, int id_offset = 0) {
  TaskGenConfig g = boot.world.tasks;
  g.count = count;
  g.seed = seed;
  g.id_offset = id_offset;
  return generate_tasks(boot.catalog, g);
}

TraceCursor interleaved_trace(const Bootstrap& boot, std::size_t tasks, std::uint64_t seed) {
  return TraceCursor(make_trace(interleaved_schedule(tasks, 50, {"GOOD", "MID", "BAD"}), boot.world.drift, seed,
                                boot.world.regimes));
}

TraceCursor regime_trace(const Bootstrap& boot, std::size_t tasks, const std::string& regime, std::uint64_t seed) {
  return TraceCursor(make_trace(interleaved_schedule(tasks, 50, {regime}), boot.world.drift, seed, boot.world.regimes));
}

// ---------------------------------------------------------------------------------------------
// 1-4: analytic threshold theory on the default score model.

Verdict criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = default_score_model();
  const double tau = solve_optimal_tau(m, 10.0, 1.0, m.lo, m.hi);
  const auto grid = linspace(m.lo, m.hi, 4096);
  const double brute = brute_force_tau(m, 10.0, 1.0, grid);
  const double spacing = grid[1] - grid[0];
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double err = std::abs(tau - std::log(10.0));
  const bool ok = err <= 1e-6 && std::abs(brute - tau) <= spacing && secs < 5.0;
  return {ok, "tau*=" + fmt(tau, 12) + " |tau*-ln10|=" + fmt(err, 3) + " brute=" + fmt(brute, 8) +
                  " |brute-tau*|=" + fmt(std::abs(brute - tau), 3) + " spacing=" + fmt(spacing, 4) +
                  " runtime=" + fmt(secs, 3) + "s"};
}

Verdict criterion_2() {
  const auto m = default_score_model();
  const double kappa = 1.0, lambda = 10.0, h = 1e-4;
  std::mt19937_64 rng(20240602);
  std::uniform_real_distribution<double> u(-1.0, 6.0);
  double worst_q = 0.0, worst_c = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double tau = u(rng);
    const auto hi = frontier_point(m, tau + h, kappa, lambda);
    const auto lo = frontier_point(m, tau - h, kappa, lambda);
    const double dq = (hi.q - lo.q) / (2 * h);
    const double dc = (hi.c - lo.c) / (2 * h);
    worst_q = std::max(worst_q, rel_err(dq, m.density(tau) * m.delta_q(tau)));
    worst_c = std::max(worst_c, rel_err(dc, m.density(tau) * kappa * m.delta_c(tau)));
  }
  return {worst_q <= 1e-5 && worst_c <= 1e-5,
          "20 taus in [-1,6]: max rel err dQ/dtau=" + fmt(worst_q, 3) + " dC/dtau=" + fmt(worst_c, 3)};
}

Verdict criterion_3() {
  const auto m = default_score_model();
  const double h = 1e-4;
  auto slope = [&](double tau, double kappa) {
    const auto a = frontier_point(m, tau + h, kappa, 10.0);
    const auto b = frontier_point(m, tau - h, kappa, 10.0);
    return (a.q - b.q) / (a.c - b.c);
  };
  double worst = 0.0;
  for (double kappa : {0.5, 1.0, 2.0})
    for (double tau : {-1.0, 0.5, 2.0, 3.5, 5.0}) worst = std::max(worst, rel_err(slope(tau, kappa), m.rho(tau) / kappa));
  const double tau_star = solve_optimal_tau(m, 10.0, 1.0, m.lo, m.hi);
  const double at_star = slope(tau_star, 1.0);
  const double err_star = rel_err(at_star, 10.0);
  return {worst <= 1e-4 && err_star <= 1e-3, "max rel err dQ/dC vs rho/kappa=" + fmt(worst, 3) +
                                                   "; slope at tau*=" + fmt(at_star, 10) + " rel err vs lambda=" +
                                                   fmt(err_star, 3)};
}

Verdict criterion_4() {
  const auto m = default_score_model();
  const double lambda = 10.0;
  std::vector<double> taus;
  for (double kappa : {0.5, 1.0, 2.0, 4.0}) taus.push_back(solve_optimal_tau(m, lambda, kappa, m.lo, m.hi, 1e-13));
  bool decreasing = true;
  for (std::size_t i = 1; i < taus.size(); ++i) decreasing = decreasing && taus[i] < taus[i - 1];
  const double d = dtau_dkappa(m, lambda, 1.0);
  const double h = 1e-4;
  const double fd = (solve_optimal_tau(m, lambda, 1.0 + h, m.lo, m.hi, 1e-14) -
                     solve_optimal_tau(m, lambda, 1.0 - h, m.lo, m.hi, 1e-14)) /
                    (2 * h);
  const bool ok = decreasing && std::abs(d + 1.0) <= 1e-4 && std::abs(d - fd) <= 1e-3;
  std::string seq;
  for (double t : taus) seq += fmt(t, 8) + " ";
  return {ok, "tau*(0.5,1,2,4)= " + seq + "dtau/dkappa(1)=" + fmt(d, 10) + " finite diff=" + fmt(fd, 10)};
}

// ---------------------------------------------------------------------------------------------
// 5-7: simulated routing on the toy world.

constexpr int kScanTasks = 2000;
constexpr int kScanNodes = 64;

ScanResult seed_scan(const Bootstrap& boot, int seed, const TraceCursor& trace, std::span<const double> lambdas,
                     std::span<const double> grid) {
  const auto tasks = corpus(boot, kScanTasks, 5000 + seed);
  RunConfig rc;
  rc.seed = static_cast<std::uint64_t>(seed);
  return threshold_scan(boot, rc, tasks, trace, grid, lambdas);
}

Verdict criterion_5() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& boot = shared_bootstrap();
  const auto grid = auto_tau_grid(boot, kScanNodes);
  const std::vector<double> lambdas = {8.0, 10.0, 12.0};
  std::vector<ScanResult> scans;
  for (int seed = 1; seed <= 3; ++seed)
    scans.push_back(seed_scan(boot, seed, interleaved_trace(boot, kScanTasks, 6000 + seed), lambdas, grid));
  const auto avg = average_scans(scans);
  const double t8 = avg.argmax_tau.at(8.0), t10 = avg.argmax_tau.at(10.0), t12 = avg.argmax_tau.at(12.0);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = t8 >= t10 && t10 >= t12 && (t8 > t10 || t10 > t12) && secs < 300.0;
  return {ok, "argmax tau: lambda=8 " + fmt(t8, 5) + ", lambda=10 " + fmt(t10, 5) + ", lambda=12 " + fmt(t12, 5) +
                  " (3 seeds x " + std::to_string(kScanTasks) + " tasks, " + std::to_string(kScanNodes) +
                  "-node grid) runtime=" + fmt(secs, 3) + "s"};
}

Verdict criterion_6() {
  const auto& boot = shared_bootstrap();
  const auto grid = auto_tau_grid(boot, kScanNodes);
  const std::vector<double> lambdas = {10.0};
  std::map<std::string, double> best;
  for (const std::string regime : {"GOOD", "MID", "BAD"}) {
    std::vector<ScanResult> scans;
    for (int seed = 1; seed <= 3; ++seed)
      scans.push_back(seed_scan(boot, seed, regime_trace(boot, kScanTasks, regime, 7000 + seed), lambdas, grid));
    best[regime] = average_scans(scans).argmax_tau.at(10.0);
  }
  const bool ok = best["GOOD"] > best["MID"] && best["MID"] > best["BAD"];
  return {ok, "argmax tau at lambda=10: GOOD " + fmt(best["GOOD"], 5) + ", MID " + fmt(best["MID"], 5) + ", BAD " +
                  fmt(best["BAD"], 5)};
}

Verdict criterion_7() {
  const auto& boot = shared_bootstrap();
  int wins = 0;
  std::string detail;
  for (int seed = 1; seed <= 5; ++seed) {
    const auto tasks = corpus(boot, 2000, 8000 + seed);
    const auto trace = interleaved_trace(boot, tasks.size(), 8100 + seed);
    RunConfig rc;
    rc.seed = static_cast<std::uint64_t>(seed);
    rc.controller = ControllerKind::Fixed;
    const auto fixed = run_experiment(boot, rc, tasks, trace);
    rc.controller = ControllerKind::FuncDyn;
    const auto dyn = run_experiment(boot, rc, tasks, trace);
    g_gate.add(fixed.steps);
    g_gate.add(dyn.steps);
    const bool win = dyn.metrics.mean_j >= fixed.metrics.mean_j;
    wins += win;
    detail += " s" + std::to_string(seed) + ":" + fmt(dyn.metrics.mean_j, 5) + (win ? ">=" : "<") +
              fmt(fixed.metrics.mean_j, 5);
  }
  return {wins >= 4, "FuncDyn >= fixed in " + std::to_string(wins) + "/5 seeds (J funcdyn vs fixed)" + detail};
}

// ---------------------------------------------------------------------------------------------
// 8: PPO gradients on a 3-action linear-softmax policy.

Verdict criterion_8() {
  using P = LinearSoftmaxPolicy;
  constexpr int kDim = 4;
  std::mt19937_64 rng(881);
  std::normal_distribution<double> nd(0.0, 0.7);
  P old(3, kDim);
  for (double& w : old.params()) w = nd(rng);
  std::vector<PpoSample<P>> batch;
  std::uniform_int_distribution<int> act(0, 2);
  for (int i = 0; i < 24; ++i) {
    std::vector<double> x(kDim);
    for (double& v : x) v = nd(rng);
    const int a = act(rng);
    batch.push_back({x, a, old.log_prob(x, a), nd(rng)});
  }
  PpoConfig cfg;
  cfg.kl_beta = 0.05;
  cfg.clip_eps = 0.2;

  const auto start = ppo_objective<P>(old, old, batch, cfg);
  const bool identities = start.mean_ratio == 1.0 && start.kl == 0.0 && start.clip_frac == 0.0;

  // Perturb so some ratios land outside the clip range, then keep only points away from the kinks.
  P pi = old;
  for (double& w : pi.params()) w += 0.25 * nd(rng);
  std::vector<PpoSample<P>> kept;
  for (const auto& b : batch) {
    const double r = std::exp(pi.log_prob(b.obs, b.decision) - b.old_log_prob);
    if (std::abs(std::abs(r - 1.0) - cfg.clip_eps) > 0.02) kept.push_back(b);
  }
  std::size_t clipped = 0;
  for (const auto& b : kept) clipped += std::abs(std::exp(pi.log_prob(b.obs, b.decision) - b.old_log_prob) - 1.0) > cfg.clip_eps;

  std::vector<double> grad;
  ppo_gradient<P>(pi, old, kept, cfg, grad);
  double num = 0.0, den = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    P plus = pi, minus = pi;
    plus.params()[i] += h;
    minus.params()[i] -= h;
    const double fd = (ppo_objective<P>(plus, old, kept, cfg).objective - ppo_objective<P>(minus, old, kept, cfg).objective) / (2 * h);
    num = std::max(num, std::abs(fd - grad[i]));
    den = std::max(den, std::abs(fd));
  }
  const double rel = num / den;
  return {identities && rel <= 1e-5 && clipped > 0 && clipped < kept.size(),
          "epoch start: ratio=" + fmt(start.mean_ratio, 17) + " kl=" + fmt(start.kl) + "; gradient max rel err=" +
              fmt(rel, 3) + " over " + std::to_string(kept.size()) + " samples (" + std::to_string(clipped) + " clipped)"};
}

// ---------------------------------------------------------------------------------------------
// 9: SFT anchoring over 200 idle-window updates.

Verdict criterion_9() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& boot = shared_bootstrap();
  const auto held = corpus(boot, 500, 777, 9'000'000);
  const auto held_trace = interleaved_trace(boot, held.size(), 778);
  constexpr int kUpdates = 200;
  int reward_up = 0, offload_down = 0;
  double viol_anchor = 0.0, viol_free = 0.0;
  std::string detail;
  for (int seed = 1; seed <= 5; ++seed) {
    const auto tasks = corpus(boot, kUpdates * 64, 300 + seed);
    const auto trace = interleaved_trace(boot, tasks.size(), 400 + seed);
    RunConfig rc;
    rc.seed = static_cast<std::uint64_t>(seed);
    rc.learning = true;
    rc.counterfactual = false;
    const auto anchored = run_experiment(boot, rc, tasks, trace);
    rc.anchoring = false;
    const auto free_run = run_experiment(boot, rc, tasks, trace);
    g_gate.add(anchored.steps);
    g_gate.add(free_run.steps);

    RunConfig ec;
    ec.seed = 9000 + static_cast<std::uint64_t>(seed);
    const auto before = evaluate_policy(boot, ec, boot.sft_policy, anchored.rm, anchored.final_thresholds, held, held_trace);
    const auto after = evaluate_policy(boot, ec, anchored.policy, anchored.rm, anchored.final_thresholds, held, held_trace);
    const auto after_free = evaluate_policy(boot, ec, free_run.policy, free_run.rm, free_run.final_thresholds, held, held_trace);
    reward_up += after.mean_reward > before.mean_reward;
    offload_down += after.offload_rate < before.offload_rate;
    viol_anchor += after.violation_rate / 5.0;
    viol_free += after_free.violation_rate / 5.0;
    detail += " s" + std::to_string(seed) + "[r " + fmt(before.mean_reward, 4) + "->" + fmt(after.mean_reward, 4) +
              ", viol " + fmt(after.violation_rate, 4) + " vs " + fmt(after_free.violation_rate, 4) + ", off " +
              fmt(before.offload_rate, 4) + "->" + fmt(after.offload_rate, 4) + "]";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = reward_up == 5 && viol_anchor <= viol_free && offload_down >= 4 && secs < 900.0;
  return {ok, "(a) reward rose " + std::to_string(reward_up) + "/5; (b) violation anchored " + fmt(viol_anchor, 5) +
                  " vs free " + fmt(viol_free, 5) + "; (c) offload fell " + std::to_string(offload_down) +
                  "/5; runtime=" + fmt(secs, 3) + "s;" + detail};
}

// ---------------------------------------------------------------------------------------------
// 10: reward-model refresh.

struct HeldRecord {
  RmContext ctx;
  StructuredAction action;
  bool cloud_better = false;
};

// Edge proposals from the SFT policy on cloud-executed contexts, each with its counterfactual flag.
std::vector<HeldRecord> held_records(const Bootstrap& boot) {
  const auto& cat = boot.catalog;
  const auto held = corpus(boot, 500, 4242, 8'000'000);
  const auto trace = interleaved_trace(boot, held.size(), 4243);
  std::vector<HeldRecord> out;
  for (std::size_t ti = 0; ti < held.size(); ++ti) {
    const auto& task = held[ti];
    Context ctx = initial_context(task);
    for (int k = 0; k < kStepCap; ++k) {
      Rng er = stream_rng(99, {stream::kEdge, static_cast<std::uint64_t>(task.id), static_cast<std::uint64_t>(k)});
      Rng cr = stream_rng(99, {stream::kCloud, static_cast<std::uint64_t>(task.id), static_cast<std::uint64_t>(k)});
      const auto obs = EdgePolicy::observe(task, ctx, cat.start_state());
      const auto edge = boot.sft_policy.realize(obs, boot.sft_policy.sample(obs, er));
      const auto cloud = cloud_oracle(cat, task, ctx, boot.world.p_correct, cr);
      const auto cf = counterfactual_eval(boot, task, ctx, edge, cloud, trace.at(ti, k).state);
      out.push_back({rm_context(cat, task, ctx), edge, !cf.edge_better});
      ctx = update_context(ctx, Venue::Cloud, cloud.tool, action_summary(cat, cloud));
      if (cloud.tool == kFinishTool) break;
    }
  }
  return out;
}

// Canonical call versus a corrupted one in the same context. Corruptions either swap in a tool
// that is not the canonical successor or change a predictable slot away from its canonical value.
std::vector<PreferencePair> synthetic_pairs(const ToolCatalog& cat, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<PreferencePair> out;
  const int n = cat.size();
  auto canonical_call = [&](int tool, int bucket) {
    StructuredAction a{tool, {}, ""};
    const auto& slots = cat.tools[tool].slots;
    for (std::size_t s = 0; s < slots.size(); ++s)
      a.args.push_back({static_cast<int>(s), slots[s].predictable ? cat.canonical[tool][s][bucket] : 0});
    return a;
  };
  while (static_cast<int>(out.size()) < count) {
    const int last = std::uniform_int_distribution<int>(0, n)(rng);
    if (last == kFinishTool) continue;
    const int bucket = std::uniform_int_distribution<int>(0, kLengthBuckets - 1)(rng);
    const int step = std::uniform_int_distribution<int>(0, kStepCap - 1)(rng);
    const int tool = cat.successor[last];
    PreferencePair p;
    p.ctx = {last, step, bucket};
    p.preferred = canonical_call(tool, bucket);
    std::vector<int> predictable;
    for (std::size_t s = 0; s < cat.tools[tool].slots.size(); ++s)
      if (cat.tools[tool].slots[s].predictable) predictable.push_back(static_cast<int>(s));
    if (!predictable.empty() && std::uniform_int_distribution<int>(0, 1)(rng) == 0) {
      p.rejected = p.preferred;
      const int s = predictable[std::uniform_int_distribution<std::size_t>(0, predictable.size() - 1)(rng)];
      const int dom = static_cast<int>(cat.tools[tool].slots[s].domain.size());
      if (dom < 2) continue;
      auto& v = p.rejected.args[s].value;
      v = (v + std::uniform_int_distribution<int>(1, dom - 1)(rng)) % dom;
    } else {
      int other = tool;
      while (other == tool) other = std::uniform_int_distribution<int>(0, n - 1)(rng);
      p.rejected = canonical_call(other, bucket);
    }
    out.push_back(p);
  }
  return out;
}

Verdict criterion_10() {
  const auto& boot = shared_bootstrap();
  const auto records = held_records(boot);

  const auto tasks = corpus(boot, 100 * 64, 301);
  const auto trace = interleaved_trace(boot, tasks.size(), 401);
  RunConfig rc;
  rc.seed = 1;
  rc.learning = true;
  rc.counterfactual = false;
  const auto run = run_experiment(boot, rc, tasks, trace);
  g_gate.add(run.steps);

  std::vector<ScoredFlag> pre, post;
  for (const auto& r : records) {
    pre.push_back({boot.rm.score(r.ctx, r.action), r.cloud_better});
    post.push_back({run.rm.score(r.ctx, r.action), r.cloud_better});
  }
  const auto risk_pre = risk_at_coverage(pre, 101);
  const auto risk_post = risk_at_coverage(post, 101);
  const double frac = matched_coverage_fraction(risk_pre, risk_post);

  const auto pairs = synthetic_pairs(boot.catalog, 2000, 1010);
  const std::span<const PreferencePair> all(pairs);
  const auto train = all.subspan(0, 1500), test = all.subspan(1500);
  RewardModel fresh(boot.catalog);
  const double zero_loss = rm_mean_loss(fresh, train, 1.0);
  const double chance = rm_pair_accuracy(fresh, test);
  RmTrainConfig tc = boot.world.rm;
  tc.seed = 1011;
  rm_train(fresh, train, tc);
  const double acc = rm_pair_accuracy(fresh, test);

  const bool ok = frac >= 0.8 && acc >= 0.9 && zero_loss == std::log(2.0);
  return {ok, "matched coverage post<=pre on " + fmt(100 * frac, 4) + "% of 101 nodes (" +
                  std::to_string(records.size()) + " held-out records); synthetic pairs: zero-init loss=" +
                  fmt(zero_loss, 17) + " (ln2=" + fmt(std::log(2.0), 17) + "), zero-init accuracy=" + fmt(chance, 3) +
                  ", held-out accuracy after refresh=" + fmt(acc, 4)};
}

// ---------------------------------------------------------------------------------------------
// 11-12: CLI determinism and the schema gate on CLI logs.

std::map<std::string, std::string> slurp_dir(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    out[fs::relative(e.path(), dir).string()] = os.str();
  }
  return out;
}

std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

int run_cli(const Args& args, const std::string& cmdline) {
  const std::string full = shell_quote(args.cli) + " " + cmdline + " > /dev/null 2>&1";
  const int rc = std::system(full.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// Schema gate over a CLI step log.
void gate_csv(const fs::path& path) {
  std::ifstream f(path);
  std::string header;
  std::getline(f, header);
  std::vector<std::string> cols;
  {
    std::stringstream hs(header);
    for (std::string c; std::getline(hs, c, ',');) cols.push_back(c);
  }
  const auto idx = [&](const std::string& name) {
    for (std::size_t i = 0; i < cols.size(); ++i)
      if (cols[i] == name) return i;
    throw std::runtime_error("step log without column " + name);
  };
  const std::size_t qi = idx("quality"), si = idx("schema_ok");
  std::vector<StepRecord> steps;
  for (std::string line; std::getline(f, line);) {
    std::vector<std::string> v;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) v.push_back(c);
    StepRecord r;
    r.quality = std::stod(v.at(qi));
    r.schema_ok = v.at(si) == "1" || v.at(si) == "true";
    steps.push_back(r);
  }
  g_gate.add(steps);
}

Verdict criterion_11(const Args& args) {
  if (args.cli.empty() || !fs::exists(args.cli)) return {false, "CLI binary not found: '" + args.cli + "'"};
  const fs::path root = fs::absolute(args.work) / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  struct Job {
    std::string name;
    std::string cmd;
  };
  const std::string sim_dir = (root / "sim").string();
  const std::vector<Job> jobs = {
      {"trace", "trace --set corpus.count=300"},
      {"theory", "theory"},
      {"sim", "sim --tasks 400 --learning --compare funcdyn --set learning.idle_period=32 --set sim.scan.enabled=true "
              "--set sim.scan.tau_nodes=8"},
      {"riskcov", "riskcov --log " + shell_quote(sim_dir + "/steps.csv") + " --post " +
                      shell_quote(sim_dir + "/steps_funcdyn.csv")},
      {"tau0", "tau0"},
      {"train-policynet", "train-policynet --set world.policynet_train.epochs=40"},
  };
  std::string detail;
  bool ok = true;
  for (const auto& job : jobs) {
    const fs::path dir = root / job.name;
    const int first = run_cli(args, job.cmd + " -o " + shell_quote(dir.string()));
    if (first != 0) {
      ok = false;
      detail += " " + job.name + ":exit " + std::to_string(first);
      continue;
    }
    const auto a = slurp_dir(dir);
    const fs::path echoed = root / (job.name + ".config.json");
    fs::copy_file(dir / "effective_config.json", echoed, fs::copy_options::overwrite_existing);
    fs::remove_all(dir);
    const int second = run_cli(args, job.cmd.substr(0, job.cmd.find(' ')) + " -c " + shell_quote(echoed.string()));
    if (second != 0) {
      ok = false;
      detail += " " + job.name + ":rerun exit " + std::to_string(second);
      continue;
    }
    const auto b = slurp_dir(dir);
    bool same = a.size() == b.size();
    for (const auto& [file, bytes] : a) {
      const auto it = b.find(file);
      same = same && it != b.end() && it->second == bytes;
    }
    ok = ok && same;
    detail += " " + job.name + ":" + std::to_string(a.size()) + (same ? " files identical" : " files DIFFER");
    if (job.name == "sim")
      for (const auto& [file, bytes] : b)
        if (file.rfind("steps", 0) == 0 && file.ends_with(".csv")) gate_csv(dir / file);
  }
  return {ok, "rerun from echoed config:" + detail};
}

Verdict criterion_12() {
  const bool ok = g_gate.runs > 0 && g_gate.invalid > 0 && g_gate.violations == 0;
  return {ok, std::to_string(g_gate.violations) + " of " + std::to_string(g_gate.invalid) +
                  " schema-invalid steps had nonzero quality (" + std::to_string(g_gate.steps) + " steps over " +
                  std::to_string(g_gate.runs) + " runs)"};
}

}  // namespace

int main(int argc, char** argv) {
  Args args;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto next = [&]() -> std::string {
      if (i + 1 >= argc) {
        std::cerr << "missing value for " << a << '\n';
        std::exit(2);
      }
      return argv[++i];
    };
    if (a == "--cli") args.cli = next();
    else if (a == "--work") args.work = next();
    else if (a == "--only") args.only.insert(std::stoi(next()));
    else {
      std::cerr << "usage: netroute_acceptance --cli PATH --work DIR [--only N]...\n";
      return 2;
    }
  }
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"optimal threshold exactness", criterion_1},
      {"frontier derivatives", criterion_2},
      {"frontier slope identities", criterion_3},
      {"comparative statics in kappa", criterion_4},
      {"lambda scan direction", criterion_5},
      {"regime ordering", criterion_6},
      {"dynamic vs fixed threshold", criterion_7},
      {"PPO gradient correctness", criterion_8},
      {"SFT anchoring", criterion_9},
      {"reward-model refresh", criterion_10},
      {"determinism", [&] { return criterion_11(args); }},
      {"schema gate", criterion_12},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!args.only.empty() && !args.only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first << "): " << v.detail
              << " [" << fmt(secs, 3) << "s]" << std::endl;
  }
  std::cout << (failed == 0 ? "ALL PASS" : std::to_string(failed) + " FAILED") << std::endl;
  return failed == 0 ? 0 : 1;
}
