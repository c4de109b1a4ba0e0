#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "netroute/cli.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string seed;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("-c,--config", a.config, "JSON experiment config");
  cmd->add_option("-s,--set", a.overrides, "override a config key, e.g. --set learning.enabled=true");
  cmd->add_option("-o,--out", a.out, std::string("output directory (default: config output_dir, then $") +
                                         netroute::kOutDirEnv + ", then ./" + netroute::kDefaultOutDir + ")");
  cmd->add_option("--seed", a.seed, "top-level seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cloud-edge routing laboratory: traces, threshold theory, simulation and analyses"};
  app.require_subcommand(1);
  CommonArgs args;
  std::vector<std::pair<std::string, std::string>> flag_keys;  // (value, config key)
  std::string controller, compare, log_path, post_path, records, data;
  int tasks = 0;
  bool learning = false;

  auto* trace = app.add_subcommand("trace", "generate a network trace CSV");
  auto* theory = app.add_subcommand("theory", "frontier sweep and optimal-threshold verification");
  auto* sim = app.add_subcommand("sim", "run the routing loop over a corpus and trace");
  auto* riskcov = app.add_subcommand("riskcov", "risk-coverage curves from step logs");
  auto* pn = app.add_subcommand("train-policynet", "train the PolicyNet router");
  auto* tau0 = app.add_subcommand("tau0", "empirical base threshold from (score, j_edge, j_cloud) records");
  for (auto* cmd : {trace, theory, sim, riskcov, pn, tau0}) add_common(cmd, args);
  sim->add_option("--controller", controller, "fixed | funcdyn | policynet | all-edge | all-cloud | oneshot-router | fixed-cascade");
  sim->add_option("--compare", compare, "second controller for a paired run");
  sim->add_option("--tasks", tasks, "number of generated tasks");
  sim->add_flag("--learning", learning, "enable idle-window learning");
  riskcov->add_option("--log", log_path, "step log with counterfactual flags");
  riskcov->add_option("--post", post_path, "second step log to compare against the first");
  tau0->add_option("--records", records, "CSV with columns score,j_edge,j_cloud");
  pn->add_option("--data", data, "CSV with columns rtt_s,bw_bps,score,q_hat,q_edge,c_edge,q_cloud,c_cloud");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : netroute::kExitUsage;
  }

  auto quoted = [](const std::string& s) { return nlohmann::json(s).dump(); };
  std::vector<std::string> overrides = args.overrides;
  if (!args.seed.empty()) overrides.push_back("seed=" + args.seed);
  if (!controller.empty()) overrides.push_back("controller.kind=" + quoted(controller));
  if (!compare.empty()) overrides.push_back("sim.compare=" + quoted(compare));
  if (tasks > 0) overrides.push_back("corpus.count=" + std::to_string(tasks));
  if (learning) overrides.push_back("learning.enabled=true");
  if (!log_path.empty()) overrides.push_back("riskcov.log=" + quoted(log_path));
  if (!post_path.empty()) overrides.push_back("riskcov.post_log=" + quoted(post_path));
  if (!records.empty()) overrides.push_back("tau0.records=" + quoted(records));
  if (!data.empty()) overrides.push_back("policynet.data=" + quoted(data));

  const std::string name = app.get_subcommands().front()->get_name();
  return netroute::run_command(name, args.config, overrides, args.out, std::cout, std::cerr);
}
