#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "netroute/econ.hpp"
#include "netroute/toyworld.hpp"

using namespace netroute;

namespace {

const ToolCatalog& catalog() {
  static const ToolCatalog cat = make_catalog();
  return cat;
}

std::vector<Task> tasks(int count, std::uint64_t seed) {
  TaskGenConfig g;
  g.count = count;
  g.seed = seed;
  return generate_tasks(catalog(), g);
}

int slotless_available_tool(const Task& t) {
  for (int id : t.tools)
    if (catalog().tools[id].slots.empty()) return id;
  return -1;
}

}  // namespace

TEST(Catalog, Shape) {
  const auto& cat = catalog();
  EXPECT_EQ(cat.tools[kFinishTool].name, "finish");
  EXPECT_TRUE(cat.tools[kFinishTool].slots.empty());
  EXPECT_EQ(cat.successor.size(), static_cast<std::size_t>(cat.size() + 1));
  for (int t = 0; t < cat.size(); ++t) {
    std::set<std::string> names;
    for (const auto& s : cat.tools[t].slots) {
      EXPECT_FALSE(s.domain.empty());
      EXPECT_TRUE(names.insert(s.name).second);
    }
  }
  EXPECT_EQ(cat.find("simulate_topology") > 0, true);
  EXPECT_EQ(cat.find("no_such_tool"), -1);
}

TEST(Tasks, MinimalTaskIsFinishOnly) {
  TaskGenConfig g;
  g.count = 1;
  g.target_len_min = g.target_len_max = 1;
  const auto t = generate_tasks(catalog(), g);
  ASSERT_EQ(t.size(), 1u);
  ASSERT_EQ(t[0].target.size(), 1u);
  EXPECT_EQ(t[0].target[0].tool, kFinishTool);
}

TEST(Tasks, DeterministicCorpus) {
  std::ostringstream a, b;
  write_corpus_jsonl(a, catalog(), tasks(1000, 5));
  write_corpus_jsonl(b, catalog(), tasks(1000, 5));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Tasks, InvariantsHold) {
  TaskGenConfig g;
  for (const auto& t : tasks(500, 6)) {
    EXPECT_GE(t.target_len(), g.target_len_min);
    EXPECT_LE(t.target_len(), g.target_len_max);
    EXPECT_EQ(t.target.back().tool, kFinishTool);
    EXPECT_TRUE(t.has_tool(kFinishTool));
    EXPECT_TRUE(std::is_sorted(t.tools.begin(), t.tools.end()));
    for (const auto& a : t.target) EXPECT_TRUE(validate_schema(catalog(), a, t));
    for (int p : t.prior_steps) EXPECT_TRUE(t.has_tool(p));
  }
}

TEST(Tasks, InvalidRangesRejected) {
  TaskGenConfig g;
  g.target_len_min = 5;
  g.target_len_max = 2;
  EXPECT_THROW(generate_tasks(catalog(), g), UsageError);
  g = {};
  g.count = 0;
  EXPECT_THROW(generate_tasks(catalog(), g), UsageError);
  g = {};
  g.p_dev = 1.5;
  EXPECT_THROW(generate_tasks(catalog(), g), UsageError);
}

TEST(Tasks, CorpusJsonlRoundTrip) {
  const auto orig = tasks(50, 7);
  std::ostringstream out;
  write_corpus_jsonl(out, catalog(), orig);
  std::istringstream in(out.str());
  const auto back = read_corpus_jsonl(in, catalog());
  ASSERT_EQ(back.size(), orig.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    EXPECT_EQ(back[i].id, orig[i].id);
    EXPECT_EQ(back[i].tools, orig[i].tools);
    EXPECT_EQ(back[i].prior_steps, orig[i].prior_steps);
    ASSERT_EQ(back[i].target.size(), orig[i].target.size());
    for (std::size_t k = 0; k < orig[i].target.size(); ++k) {
      EXPECT_EQ(back[i].target[k].tool, orig[i].target[k].tool);
      EXPECT_EQ(back[i].target[k].args, orig[i].target[k].args);
    }
  }
  std::istringstream bad("{\"id\":1}\n");
  EXPECT_THROW(read_corpus_jsonl(bad, catalog()), UsageError);
}

TEST(Schema, Validation) {
  const auto t = tasks(20, 8);
  const Task* task = nullptr;
  StructuredAction with_slots;
  for (const auto& x : t)
    for (const auto& a : x.target)
      if (!task && a.args.size() >= 2) {
        task = &x;
        with_slots = a;
      }
  ASSERT_NE(task, nullptr);
  EXPECT_TRUE(validate_schema(catalog(), with_slots, *task));

  StructuredAction unknown = with_slots;
  unknown.tool = catalog().size() + 3;
  EXPECT_FALSE(validate_schema(catalog(), unknown, *task));

  StructuredAction missing = with_slots;
  missing.args.pop_back();
  EXPECT_FALSE(validate_schema(catalog(), missing, *task));

  StructuredAction extra = with_slots;
  extra.args.push_back({-1, 0});
  EXPECT_FALSE(validate_schema(catalog(), extra, *task));

  StructuredAction dup = with_slots;
  dup.args[1].slot = dup.args[0].slot;
  EXPECT_FALSE(validate_schema(catalog(), dup, *task));

  StructuredAction out_of_domain = with_slots;
  out_of_domain.args[0].value = 99;
  EXPECT_FALSE(validate_schema(catalog(), out_of_domain, *task));

  int unavailable = -1;
  for (int id = 1; id < catalog().size(); ++id)
    if (!task->has_tool(id)) unavailable = id;
  ASSERT_GE(unavailable, 0);
  Rng rng = stream_rng(1, {});
  EXPECT_FALSE(validate_schema(catalog(), random_valid_call(catalog(), unavailable, rng), *task));
}

TEST(Quality, RubricTiers) {
  const auto t = tasks(30, 9);
  for (const auto& task : t) {
    for (int k = 0; k < task.target_len(); ++k) {
      const auto& want = task.target[k];
      EXPECT_EQ(evaluate_quality(want, task, k), 1.0);
      if (!want.args.empty()) {
        StructuredAction wrong = want;
        const int dom = static_cast<int>(catalog().tools[want.tool].slots[0].domain.size());
        wrong.args[0].value = (wrong.args[0].value + 1) % dom;
        if (dom > 1) {
          EXPECT_EQ(evaluate_quality(wrong, task, k), 0.5);
        }
      }
      StructuredAction other = want;
      other.tool = want.tool == kFinishTool ? 1 : kFinishTool;
      other.args.clear();
      EXPECT_EQ(evaluate_quality(other, task, k), 0.0);
    }
    // Past the plan the expected call is finish().
    EXPECT_EQ(evaluate_quality({kFinishTool, {}, ""}, task, kStepCap - 1), 1.0);
  }
  EXPECT_THROW(evaluate_quality({}, t[0], kStepCap), UsageError);
}

TEST(Quality, SchemaGateComposition) {
  const auto task = tasks(1, 10)[0];
  StructuredAction a = task.target[0];
  a.args.push_back({-1, 0});
  EXPECT_FALSE(validate_schema(catalog(), a, task));
  EXPECT_EQ(step_quality(validate_schema(catalog(), a, task), evaluate_quality(a, task, 0)), 0.0);
}

TEST(Context, EdgeIdOnlyCloudSummary) {
  const auto task = tasks(1, 11)[0];
  Context c = initial_context(task);
  const int tool = catalog().find("simulate_topology");
  c = update_context(c, Venue::Edge, tool, "ignored");
  EXPECT_EQ(c.completed.back().tool, tool);
  EXPECT_FALSE(c.completed.back().has_summary);
  c = update_context(c, Venue::Cloud, tool, "topology built with 5 nodes");
  EXPECT_TRUE(c.completed.back().has_summary);
  EXPECT_EQ(c.completed.back().summary, "topology built with 5 nodes");
  EXPECT_FALSE(c.completed.back().truncated);
  c = update_context(c, Venue::Cloud, tool, std::string(kSummaryCap + 40, 'x'));
  EXPECT_EQ(c.completed.back().summary.size(), kSummaryCap);
  EXPECT_TRUE(c.completed.back().truncated);
  EXPECT_EQ(c.completed.size(), task.prior_steps.size() + 3);
  EXPECT_EQ(c.k, 3);
}

TEST(CloudOracle, DegenerateProbabilities) {
  for (const auto& task : tasks(50, 12)) {
    Context ctx = initial_context(task);
    for (int k = 0; k < task.target_len(); ++k) {
      Rng r1 = stream_rng(1, {static_cast<std::uint64_t>(task.id), static_cast<std::uint64_t>(k)});
      const auto exact = cloud_oracle(catalog(), task, ctx, 1.0, r1);
      EXPECT_EQ(exact.tool, task.target[k].tool);
      EXPECT_EQ(exact.args, task.target[k].args);
      Rng r0 = stream_rng(2, {static_cast<std::uint64_t>(task.id), static_cast<std::uint64_t>(k)});
      const auto wrong = cloud_oracle(catalog(), task, ctx, 0.0, r0);
      EXPECT_TRUE(validate_schema(catalog(), wrong, task));
      EXPECT_LT(evaluate_quality(wrong, task, k), 1.0);
      ctx = update_context(ctx, Venue::Cloud, exact.tool, action_summary(catalog(), exact));
    }
  }
  Rng r = stream_rng(3, {});
  EXPECT_THROW(cloud_oracle(catalog(), tasks(1, 1)[0], {}, 1.5, r), UsageError);
}

TEST(CloudOracle, AlwaysSchemaValidAndDominatesUntrainedEdge) {
  const EdgePolicy untrained(catalog());
  for (const auto& task : tasks(200, 13)) {
    Context ctx = initial_context(task);
    for (int k = 0; k < task.target_len(); ++k) {
      Rng r = stream_rng(4, {static_cast<std::uint64_t>(task.id), static_cast<std::uint64_t>(k)});
      const auto a = cloud_oracle(catalog(), task, ctx, 0.98, r);
      ASSERT_TRUE(validate_schema(catalog(), a, task));
      // Exact expected quality of the zero-parameter edge policy at this step.
      const auto obs = EdgePolicy::observe(task, ctx, catalog().start_state());
      const auto tp = untrained.tool_probs(obs);
      const auto& want = task.target[k];
      double edge_q = 0.0;
      for (std::size_t i = 0; i + 1 < tp.size(); ++i) {
        if (obs.available[i] != want.tool) continue;
        double all_right = 1.0;
        for (int s = 0; s < untrained.slot_count(want.tool); ++s) all_right /= untrained.slot_domain(want.tool, s);
        edge_q = tp[i] * (all_right + 0.5 * (1.0 - all_right));
      }
      const double cloud_q = 0.98 + 0.02 * (want.args.empty() ? 0.0 : 0.5);
      EXPECT_GE(cloud_q, edge_q);
      ctx = update_context(ctx, Venue::Cloud, a.tool, action_summary(catalog(), a));
    }
  }
}

TEST(EdgePolicy, ZeroParametersAreUniform) {
  const EdgePolicy pi(catalog());
  const auto task = tasks(1, 14)[0];
  const auto obs = EdgePolicy::observe(task, initial_context(task), catalog().start_state());
  const auto tp = pi.tool_probs(obs);
  const double T = static_cast<double>(task.tools.size());
  ASSERT_EQ(tp.size(), task.tools.size() + 1);
  for (double p : tp) EXPECT_NEAR(p, 1.0 / (T + 1), 1e-15);
  const int slotless = slotless_available_tool(task);
  ASSERT_GE(slotless, 0);
  EXPECT_NEAR(pi.log_prob(obs, {slotless, {}}), -std::log(T + 1), 1e-12);
  EXPECT_NEAR(pi.log_prob(obs, {pi.malformed(), {}}), -std::log(T + 1), 1e-12);
}

TEST(EdgePolicy, SaturatedLogitAlwaysSamplesTarget) {
  EdgePolicy pi(catalog());
  const auto task = tasks(1, 15)[0];
  const int target = task.target[0].tool;
  pi.params()[pi.tool_row(target) + pi.dim() - 1] = 80.0;
  const auto obs = EdgePolicy::observe(task, initial_context(task), catalog().start_state());
  Rng rng = stream_rng(5, {});
  for (int i = 0; i < 200; ++i) EXPECT_EQ(pi.sample(obs, rng).tool, target);
}

TEST(EdgePolicy, HeadsSumToOneAndSampleLogProbMatches) {
  EdgePolicy pi(catalog());
  Rng init = stream_rng(6, {});
  std::normal_distribution<double> n(0.0, 0.5);
  for (double& w : pi.params()) w = n(init);
  const auto task = tasks(1, 16)[0];
  const auto obs = EdgePolicy::observe(task, initial_context(task), catalog().start_state());
  double sum = 0.0;
  for (double p : pi.tool_probs(obs)) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  Rng rng = stream_rng(7, {});
  for (int i = 0; i < 50; ++i) {
    double lp = 0.0;
    const auto d = pi.sample(obs, rng, &lp);
    EXPECT_NEAR(lp, pi.log_prob(obs, d), 1e-12);
  }
}

TEST(EdgePolicy, GradLogProbMatchesFiniteDifferences) {
  EdgePolicy pi(catalog());
  Rng init = stream_rng(8, {});
  std::normal_distribution<double> n(0.0, 0.3);
  for (double& w : pi.params()) w = n(init);
  const auto task = tasks(1, 17)[0];
  const auto obs = EdgePolicy::observe(task, initial_context(task), catalog().start_state());
  const auto d = EdgePolicy::decision_of(task.target[0]);
  std::vector<double> g(pi.params().size(), 0.0);
  pi.grad_log_prob(obs, d, 1.0, g);
  const double h = 1e-6;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] == 0.0) continue;
    EdgePolicy a = pi, b = pi;
    a.params()[i] += h;
    b.params()[i] -= h;
    const double fd = (a.log_prob(obs, d) - b.log_prob(obs, d)) / (2 * h);
    EXPECT_NEAR(g[i], fd, 1e-7);
  }
}

TEST(EdgePolicy, MalformedRealizationIsSchemaInvalid) {
  const EdgePolicy pi(catalog());
  for (const auto& task : tasks(30, 18)) {
    const auto obs = EdgePolicy::observe(task, initial_context(task), catalog().start_state());
    const auto a = pi.realize(obs, {pi.malformed(), {}});
    EXPECT_TRUE(task.has_tool(a.tool));
    EXPECT_FALSE(validate_schema(catalog(), a, task));
  }
}

TEST(EdgePolicy, ValidDecisionRealizesToValidCall) {
  const EdgePolicy pi(catalog());
  Rng rng = stream_rng(9, {});
  for (const auto& task : tasks(30, 19)) {
    const auto obs = EdgePolicy::observe(task, initial_context(task), catalog().start_state());
    for (int i = 0; i < 20; ++i) {
      const auto d = pi.sample(obs, rng);
      if (d.tool == pi.malformed()) continue;
      const auto a = pi.realize(obs, d);
      EXPECT_TRUE(validate_schema(catalog(), a, task));
      EXPECT_EQ(EdgePolicy::decision_of(a), d);
    }
  }
}

TEST(Sft, RaisesTargetLikelihood) {
  const auto data = supervised_steps(catalog(), tasks(200, 20));
  EdgePolicy pi(catalog());
  auto mean_lp = [&]() {
    double s = 0.0;
    for (const auto& d : data) s += pi.log_prob(d.obs, d.target);
    return s / static_cast<double>(data.size());
  };
  const double before = mean_lp();
  sft_train(pi, data, {});
  EXPECT_GT(mean_lp(), before + 1.0);
  EXPECT_THROW(sft_train(pi, {}, {}), UsageError);
}
