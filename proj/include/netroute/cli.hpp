#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "netroute/config.hpp"
#include "netroute/sim.hpp"
#include "netroute/theory.hpp"

namespace netroute {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

namespace cli_detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write '" + p.string() + "'");
  return out;
}

inline void write_json(const std::filesystem::path& p, const json& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline CsvTable read_csv(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string(what) + ": no input file given");
  std::ifstream in(path);
  if (!in) throw UsageError(std::string(what) + ": cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) return t;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size())
      throw UsageError(std::string(what) + ": row with " + std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline double parse_number(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string(what) + ": '" + s + "' is not a number");
  }
}

inline std::vector<Task> load_corpus(const ExperimentConfig& cfg, const ToolCatalog& cat) {
  if (cfg.corpus.file.empty()) return generate_tasks(cat, cfg.corpus.gen);
  std::ifstream in(cfg.corpus.file);
  if (!in) throw UsageError("corpus file '" + cfg.corpus.file + "' does not exist");
  auto tasks = read_corpus_jsonl(in, cat);
  if (tasks.empty()) throw UsageError("corpus file '" + cfg.corpus.file + "' holds no tasks");
  return tasks;
}

inline std::vector<ScheduleSegment> trace_schedule(const ExperimentConfig& cfg, std::size_t tasks) {
  if (!cfg.trace.schedule.empty()) return cfg.trace.schedule;
  return interleaved_schedule(tasks, static_cast<std::size_t>(cfg.trace.tasks_per_segment), cfg.trace.interleave);
}

inline Trace load_trace(const ExperimentConfig& cfg, std::size_t tasks) {
  if (cfg.trace.file.empty())
    return make_trace(trace_schedule(cfg, tasks), cfg.world.drift, *cfg.trace.seed, cfg.world.regimes);
  std::ifstream in(cfg.trace.file);
  if (!in) throw UsageError("trace file '" + cfg.trace.file + "' does not exist");
  auto trace = read_trace_csv(in);
  for (const auto& t : trace) cfg.world.regimes.find(t.regime);
  return trace;
}

inline Bootstrap bootstrap_for(const ExperimentConfig& cfg, bool need_policynet) {
  WorldConfig w = cfg.world;
  w.policynet = need_policynet;
  return make_bootstrap(w, cfg.econ);
}

inline json thresholds_json(const Thresholds& t) {
  return {{"tau0", round_sig(t.tau0)}, {"funcdyn_tau0", round_sig(t.funcdyn_tau0)}};
}

inline json run_json(const RunConfig& rc, const ExperimentResult& r) {
  return {{"controller", controller_name(rc.controller)},
          {"metrics", metrics_to_json(r.metrics)},
          {"initial_thresholds", thresholds_json(r.initial_thresholds)},
          {"final_thresholds", thresholds_json(r.final_thresholds)},
          {"updates", r.diagnostics.size()},
          {"near_threshold_uploads", r.near_threshold_uploads},
          {"rm_cache_size", r.rm_cache_size}};
}

inline std::vector<ScoredFlag> scored_flags_from_log(const std::string& path) {
  const auto t = read_csv(path, "riskcov");
  const int s_col = t.column("score");
  const int f_col = t.column("cloud_better");
  if (s_col < 0) throw UsageError("riskcov: '" + path + "' has no score column; expected a sim step log");
  if (f_col < 0)
    throw UsageError("riskcov: '" + path +
                     "' has no cloud_better column; rerun sim with --set sim.counterfactual=true");
  if (t.rows.empty()) throw UsageError("riskcov: '" + path + "' has no data rows");
  std::vector<ScoredFlag> out;
  for (const auto& row : t.rows) {
    const auto& f = row[f_col];
    if (f != "0" && f != "1")
      throw UsageError("riskcov: '" + path +
                       "' lacks counterfactual flags; rerun sim with --set sim.counterfactual=true");
    out.push_back({parse_number(row[s_col], "riskcov"), f == "1"});
  }
  return out;
}

inline void write_riskcov_csv(const std::filesystem::path& p, const std::vector<RiskCoveragePoint>& pts) {
  auto out = open_out(p);
  out << "tau,coverage,risk\n";
  for (const auto& r : pts) out << format_sig(r.tau) << ',' << format_sig(r.coverage) << ',' << format_sig(r.risk) << '\n';
}

inline std::vector<double> score_grid(const std::vector<ScoredFlag>& recs, int nodes) {
  double lo = recs.front().score, hi = lo;
  for (const auto& r : recs) {
    lo = std::min(lo, r.score);
    hi = std::max(hi, r.score);
  }
  if (hi == lo) return std::vector<double>(static_cast<std::size_t>(nodes), lo);
  return linspace(lo, hi, nodes);
}

}  // namespace cli_detail

// Each command writes its outputs and the effective config into `out` and returns an exit code;
// errors surface as exceptions for the caller to map.
inline void echo_config(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  cli_detail::write_json(out / "effective_config.json", config_to_json(cfg));
}

inline int cmd_trace(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  echo_config(cfg, out);
  const auto trace = make_trace(cli_detail::trace_schedule(cfg, static_cast<std::size_t>(cfg.corpus.gen.count)),
                                cfg.world.drift, *cfg.trace.seed, cfg.world.regimes);
  auto f = cli_detail::open_out(out / "trace.csv");
  write_trace_csv(f, trace);
  log << "trace: " << trace.size() << " steps -> " << (out / "trace.csv").string() << '\n';
  return kExitOk;
}

inline int cmd_theory(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  const auto& th = cfg.theory;
  if (th.lambdas.empty()) throw UsageError("theory: the lambda grid is empty");
  if (th.kappas.empty()) throw UsageError("theory: the kappa grid is empty");
  echo_config(cfg, out);
  const ScoreModel m = make_score_model(th.model);
  const auto sweep = linspace(m.lo, m.hi, th.frontier_nodes);
  const auto brute_grid = linspace(m.lo, m.hi, th.brute_nodes);
  const double spacing = (m.hi - m.lo) / (th.brute_nodes - 1);

  auto frontier = cli_detail::open_out(out / "frontier.csv");
  frontier << "tau,q,c,j,kappa,lambda\n";
  auto table = cli_detail::open_out(out / "tau_star.csv");
  table << "lambda,kappa,status,tau_star,brute_tau,grid_spacing,brute_agrees,dtau_dkappa,dtau_dkappa_fd\n";
  std::vector<std::string> verdicts;
  bool all_pass = true;
  auto verdict = [&](bool ok, const std::string& what) {
    all_pass = all_pass && ok;
    verdicts.push_back(std::string(ok ? "PASS " : "FAIL ") + what);
  };

  for (double lam : th.lambdas) {
    std::vector<std::pair<double, double>> solved;  // (kappa, tau*)
    for (double kap : th.kappas) {
      for (const auto& p : frontier_sweep(m, sweep, kap, lam, th.quad))
        frontier << format_sig(p.tau) << ',' << format_sig(p.q) << ',' << format_sig(p.c) << ',' << format_sig(p.j)
                 << ',' << format_sig(kap) << ',' << format_sig(lam) << '\n';
      const std::string cell = "lambda=" + format_sig(lam) + " kappa=" + format_sig(kap);
      double tau = 0.0;
      try {
        tau = solve_optimal_tau(m, lam, kap, m.lo, m.hi);
      } catch (const NoInteriorOptimum& e) {
        table << format_sig(lam) << ',' << format_sig(kap) << ",no_interior_optimum," << format_sig(e.better_endpoint())
              << ",,,,,\n";
        verdicts.push_back("SKIP " + cell + ": no interior optimum, better endpoint tau=" + format_sig(e.better_endpoint()));
        continue;
      }
      const double brute = brute_force_tau(m, lam, kap, brute_grid, th.quad);
      const bool agrees = std::abs(tau - brute) <= spacing;
      const double h = th.fd_step;
      std::string fd_text;
      const double analytic = lam / rho_derivative(m, tau, 1e-5 * std::max(1.0, std::abs(tau)));
      try {
        const double fd = (solve_optimal_tau(m, lam, kap + h, m.lo, m.hi, 1e-13) -
                           solve_optimal_tau(m, lam, kap - h, m.lo, m.hi, 1e-13)) /
                          (2.0 * h);
        fd_text = format_sig(fd);
        verdict(std::abs(analytic - fd) <= 1e-3 * std::max(1.0, std::abs(fd)),
                "dtau/dkappa matches central differences at " + cell);
      } catch (const NoInteriorOptimum&) {
        verdicts.push_back("SKIP " + cell + ": finite-difference stencil leaves the bracket");
      }
      table << format_sig(lam) << ',' << format_sig(kap) << ",ok," << format_sig(tau) << ',' << format_sig(brute) << ','
            << format_sig(spacing) << ',' << (agrees ? 1 : 0) << ',' << format_sig(analytic) << ',' << fd_text << '\n';
      verdict(agrees, "solver within one grid spacing of brute force at " + cell);
      solved.push_back({kap, tau});
    }
    if (solved.size() >= 2) {
      std::sort(solved.begin(), solved.end());
      bool decreasing = true;
      for (std::size_t i = 1; i < solved.size(); ++i) decreasing = decreasing && solved[i].second < solved[i - 1].second;
      verdict(decreasing, "tau* strictly decreasing in kappa at lambda=" + format_sig(lam));
    }
  }
  auto report = cli_detail::open_out(out / "verification.txt");
  for (const auto& v : verdicts) report << v << '\n';
  report << (all_pass ? "OVERALL PASS" : "OVERALL FAIL") << '\n';
  log << "theory: " << verdicts.size() << " checks, " << (all_pass ? "all passed" : "some failed") << '\n';
  return kExitOk;
}

inline int cmd_sim(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  const bool need_pn = cfg.run.controller == ControllerKind::PolicyNet ||
                       (cfg.sim.compare && parse_controller(*cfg.sim.compare) == ControllerKind::PolicyNet);
  const ToolCatalog cat = make_catalog(cfg.world.catalog);
  const auto tasks = cli_detail::load_corpus(cfg, cat);
  const TraceCursor trace(cli_detail::load_trace(cfg, tasks.size()));
  echo_config(cfg, out);
  const Bootstrap boot = cli_detail::bootstrap_for(cfg, need_pn);

  auto run_one = [&](const RunConfig& rc, const std::string& suffix) {
    Simulator sim(boot, rc);
    auto res = sim.run(tasks, trace);
    if (rc.log_steps) {
      auto f = cli_detail::open_out(out / ("steps" + suffix + ".csv"));
      write_step_log_csv(f, res.steps);
    }
    if (rc.learning) {
      auto d = cli_detail::open_out(out / ("diagnostics" + suffix + ".csv"));
      write_diagnostics_csv(d, res.diagnostics);
      auto c = cli_detail::open_out(out / ("rm_cache" + suffix + ".jsonl"));
      write_cache_jsonl(c, boot.catalog, sim.caches().rm_cache);
    }
    return res;
  };

  const auto primary = run_one(cfg.run, "");
  json metrics{{"primary", cli_detail::run_json(cfg.run, primary)}, {"compare", nullptr}, {"j_difference", nullptr}};
  if (cfg.sim.compare) {
    RunConfig rc = cfg.run;
    rc.controller = parse_controller(*cfg.sim.compare);
    const auto other = run_one(rc, std::string("_") + controller_name(rc.controller));
    metrics["compare"] = cli_detail::run_json(rc, other);
    metrics["j_difference"] = round_sig(primary.metrics.mean_j - other.metrics.mean_j);
  }
  if (cfg.sim.scan.enabled) {
    const auto grid = cfg.sim.scan.tau_grid.empty() ? auto_tau_grid(boot, cfg.sim.scan.tau_nodes) : cfg.sim.scan.tau_grid;
    if (cfg.sim.scan.lambdas.empty()) throw UsageError("sim: scan lambda grid is empty");
    const auto scan = threshold_scan(boot, cfg.run, tasks, trace, grid, cfg.sim.scan.lambdas);
    auto f = cli_detail::open_out(out / "scan.csv");
    f << "lambda,tau,q,c,j\n";
    for (const auto& r : scan.rows)
      f << format_sig(r.lambda) << ',' << format_sig(r.tau) << ',' << format_sig(r.q) << ',' << format_sig(r.c) << ','
        << format_sig(r.j) << '\n';
    json best = json::object();
    for (const auto& [lam, tau] : scan.argmax_tau) best[format_sig(lam)] = round_sig(tau);
    metrics["scan_argmax_tau"] = best;
  }
  cli_detail::write_json(out / "metrics.json", metrics);
  log << "sim: " << controller_name(cfg.run.controller) << " mean J " << format_sig(primary.metrics.mean_j, 6)
      << ", offload " << format_sig(primary.metrics.offload_rate, 4) << " over " << primary.metrics.tasks << " tasks\n";
  return kExitOk;
}

inline int cmd_riskcov(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  const auto pre = cli_detail::scored_flags_from_log(cfg.riskcov.log);
  std::vector<ScoredFlag> post;
  if (!cfg.riskcov.post_log.empty()) post = cli_detail::scored_flags_from_log(cfg.riskcov.post_log);
  echo_config(cfg, out);
  const int n = cfg.riskcov.nodes;
  cli_detail::write_riskcov_csv(out / "riskcov.csv", risk_coverage_curve(pre, cli_detail::score_grid(pre, n)));
  if (post.empty()) {
    log << "riskcov: " << pre.size() << " records -> " << (out / "riskcov.csv").string() << '\n';
    return kExitOk;
  }
  cli_detail::write_riskcov_csv(out / "riskcov_post.csv", risk_coverage_curve(post, cli_detail::score_grid(post, n)));
  const auto a = risk_at_coverage(pre, n);
  const auto b = risk_at_coverage(post, n);
  auto f = cli_detail::open_out(out / "riskcov_matched.csv");
  f << "coverage,risk_pre,risk_post\n";
  for (int i = 0; i < n; ++i)
    f << format_sig(static_cast<double>(i) / (n - 1)) << ',' << format_sig(a[i]) << ',' << format_sig(b[i]) << '\n';
  const double frac = matched_coverage_fraction(a, b);
  const bool pass = frac >= cfg.riskcov.pass_fraction;
  cli_detail::write_json(out / "riskcov_summary.json",
                         {{"matched_fraction", round_sig(frac)}, {"pass_fraction", cfg.riskcov.pass_fraction},
                          {"nodes", n}, {"verdict", pass ? "PASS" : "FAIL"}});
  log << (pass ? "PASS" : "FAIL") << " post-refresh risk at or below pre-refresh on " << format_sig(100.0 * frac, 4)
      << "% of coverage nodes\n";
  return kExitOk;
}

inline int cmd_train_policynet(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  PolicyNetDataset data;
  if (cfg.policynet.data.empty()) {
    echo_config(cfg, out);
    data = policynet_dataset(cli_detail::bootstrap_for(cfg, false));
  } else {
    const auto t = cli_detail::read_csv(cfg.policynet.data, "train-policynet");
    const char* cols[] = {"rtt_s", "bw_bps", "score", "q_hat", "q_edge", "c_edge", "q_cloud", "c_cloud"};
    std::vector<int> idx;
    for (const char* c : cols) {
      idx.push_back(t.column(c));
      if (idx.back() < 0)
        throw UsageError(std::string("train-policynet: missing column '") + c +
                         "'; expected rtt_s,bw_bps,score,q_hat,q_edge,c_edge,q_cloud,c_cloud");
    }
    if (t.rows.empty()) throw UsageError("train-policynet: the dataset is empty");
    echo_config(cfg, out);
    std::vector<std::array<double, 8>> raw;
    for (const auto& row : t.rows) {
      std::array<double, 8> v{};
      for (int i = 0; i < 8; ++i) v[i] = cli_detail::parse_number(row[idx[i]], "train-policynet");
      raw.push_back(v);
    }
    data.norm.net = cfg.run.funcdyn.norm;
    data.norm.score = {raw[0][2], raw[0][2]};
    for (const auto& v : raw) {
      data.norm.score.lo = std::min(data.norm.score.lo, v[2]);
      data.norm.score.hi = std::max(data.norm.score.hi, v[2]);
    }
    for (const auto& v : raw) {
      data.features.push_back(policy_features(data.norm, {v[0], v[1]}, v[2], v[3]));
      data.paired.push_back({v[4], v[5], v[6], v[7]});
    }
  }
  PolicyNet net;
  net.norm() = data.norm;
  net.init_random(cfg.seed);
  TrainHyper h = cfg.world.policynet_train;
  h.seed = cfg.seed;
  const auto labels = policynet_labels(data.paired, cfg.econ.cost.lambda);
  const auto fit = policynet_train(net, data.features, labels, h);
  cli_detail::write_json(out / "policynet.json", policynet_to_json(net));
  auto f = cli_detail::open_out(out / "loss_history.csv");
  f << "epoch,loss\n";
  for (std::size_t e = 0; e < fit.loss_history.size(); ++e) f << e << ',' << format_sig(fit.loss_history[e]) << '\n';
  std::size_t ones = 0;
  for (int y : labels) ones += y;
  cli_detail::write_json(out / "policynet_summary.json",
                         {{"samples", labels.size()}, {"cloud_labels", ones}, {"single_class", fit.single_class},
                          {"train_accuracy", round_sig(fit.accuracy)},
                          {"initial_loss", round_sig(fit.loss_history.front())},
                          {"final_loss", round_sig(fit.loss_history.back())}});
  if (fit.single_class) log << "warning: training labels are all one class\n";
  log << "train-policynet: " << labels.size() << " samples, accuracy " << format_sig(fit.accuracy, 4) << '\n';
  return kExitOk;
}

inline int cmd_tau0(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  std::vector<Tau0Record> recs;
  if (cfg.tau0.records.empty()) {
    echo_config(cfg, out);
    const auto boot = cli_detail::bootstrap_for(cfg, false);
    const double lam = cfg.econ.cost.lambda;
    for (const auto& c : boot.calibration)
      recs.push_back({boot.rm.score(c.ctx, c.edge_action), marginal_utility(c.edge, c.plan_len, lam),
                      marginal_utility(c.cloud, c.plan_len, lam)});
  } else {
    const auto t = cli_detail::read_csv(cfg.tau0.records, "tau0");
    const int s = t.column("score"), e = t.column("j_edge"), c = t.column("j_cloud");
    if (s < 0 || e < 0 || c < 0) throw UsageError("tau0: expected columns score,j_edge,j_cloud");
    if (t.rows.empty()) throw UsageError("tau0: no records");
    echo_config(cfg, out);
    for (const auto& row : t.rows)
      recs.push_back({cli_detail::parse_number(row[s], "tau0"), cli_detail::parse_number(row[e], "tau0"),
                      cli_detail::parse_number(row[c], "tau0")});
  }
  const auto r = empirical_tau0(recs);
  cli_detail::write_json(out / "tau0.json", {{"tau0", round_sig(r.tau0)}, {"utility", round_sig(r.utility)},
                                             {"candidates", r.candidates}, {"records", recs.size()}});
  log << "tau0: " << format_sig(r.tau0) << " (utility " << format_sig(r.utility) << ")\n";
  return kExitOk;
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"trace", "theory", "sim", "riskcov", "train-policynet", "tau0"};
  return names;
}

inline int dispatch_command(const std::string& name, const ExperimentConfig& cfg, const std::filesystem::path& out,
                            std::ostream& log) {
  if (name == "trace") return cmd_trace(cfg, out, log);
  if (name == "theory") return cmd_theory(cfg, out, log);
  if (name == "sim") return cmd_sim(cfg, out, log);
  if (name == "riskcov") return cmd_riskcov(cfg, out, log);
  if (name == "train-policynet") return cmd_train_policynet(cfg, out, log);
  if (name == "tau0") return cmd_tau0(cfg, out, log);
  throw UsageError("unknown command '" + name + "'");
}

// Builds the effective config, runs the command and maps failures to exit codes.
inline int run_command(const std::string& name, const std::string& config_path, const std::vector<std::string>& overrides,
                       const std::string& out_flag, std::ostream& log, std::ostream& err) {
  try {
    json user = config_path.empty() ? json::object() : read_json_file(config_path);
    for (const auto& o : overrides) apply_override(user, o);
    ExperimentConfig cfg = config_from_json(user);
    cfg.output_dir = resolve_output_dir(out_flag, cfg.output_dir);
    return dispatch_command(name, cfg, cfg.output_dir, log);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace netroute
