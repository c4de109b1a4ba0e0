#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "netroute/econ.hpp"

using namespace netroute;

TEST(Transmission, Examples) {
  EXPECT_DOUBLE_EQ(transmission_time(0, 80e6), 0.0);
  EXPECT_DOUBLE_EQ(transmission_time(1e6, 80e6), 0.1);
  EXPECT_DOUBLE_EQ(transmission_time(1e6, 8e6), 1.0);
  EXPECT_THROW(transmission_time(1e6, 0.0), DomainError);
  EXPECT_THROW(transmission_time(1e6, -5.0), DomainError);
}

TEST(Latency, EdgeAndCloud) {
  LatencyParams p;
  p.edge_latency = 0.5;
  p.cloud_compute = 0.3;
  p.payload_bytes = 1e6;
  const NetworkState s{0.05, 80e6};
  EXPECT_DOUBLE_EQ(step_latency(Venue::Edge, p, s), 0.5);
  EXPECT_NEAR(step_latency(Venue::Cloud, p, s), 0.45, 1e-15);
  p.payload_bytes = 0;
  p.cloud_compute = 0;
  EXPECT_EQ(step_latency(Venue::Cloud, p, s), 0.05);
  EXPECT_THROW(step_latency(Venue::Cloud, p, {0.05, 0.0}), DomainError);
  // The edge path never touches the link.
  EXPECT_DOUBLE_EQ(step_latency(Venue::Edge, p, {10.0, 1.0}), p.edge_latency);
}

TEST(Cost, Examples) {
  CostParams c;
  c.alpha = 0.0;
  EXPECT_EQ(step_cost(0.7, 0, c), 0.0);
  c.alpha = 0.01;
  c.c_tok = 2e-6;
  EXPECT_NEAR(step_cost(0.45, 500, c), 0.0055, 1e-15);
  EXPECT_NEAR(step_cost(0.5, 0, c), 0.005, 1e-15);
}

TEST(Cost, LinearInLatencyAndTokens) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 5.0), tok(0.0, 2000.0);
  const CostParams c{0.03, 5e-6, 10.0};
  for (int i = 0; i < 200; ++i) {
    const double l1 = u(rng), l2 = u(rng), t1 = tok(rng), t2 = tok(rng);
    EXPECT_NEAR(step_cost(l1 + l2, t1 + t2, c), step_cost(l1, t1, c) + step_cost(l2, t2, c), 1e-14);
    EXPECT_GE(step_cost(l1, t1, c), 0.0);
  }
}

TEST(Quality, SchemaGate) {
  EXPECT_EQ(step_quality(false, 0.9), 0.0);
  EXPECT_EQ(step_quality(true, 0.7), 0.7);
  EXPECT_EQ(step_quality(true, 0.0), 0.0);
  EXPECT_THROW(step_quality(true, 1.5), DomainError);
  EXPECT_THROW(step_quality(false, -0.1), DomainError);
}

TEST(Aggregate, Examples) {
  const std::vector<StepOutcome> a{{Venue::Edge, 0, 0, 1.0, 0.1}, {Venue::Cloud, 0, 0, 0.5, 0.3}};
  const auto r = task_aggregate(a, 1.0);
  EXPECT_DOUBLE_EQ(r.q, 0.75);
  EXPECT_DOUBLE_EQ(r.c, 0.4);
  EXPECT_NEAR(r.j, 0.35, 1e-15);

  const std::vector<StepOutcome> one{{Venue::Edge, 0, 0, 0.6, 0.0}};
  EXPECT_EQ(task_aggregate(one, 10.0).j, 0.6);

  const std::vector<StepOutcome> b{{Venue::Edge, 0, 0, 0.8, 0.01}, {Venue::Edge, 0, 0, 0.6, 0.02}};
  const auto rb = task_aggregate(b, 10.0);
  EXPECT_NEAR(rb.q, 0.7, 1e-15);
  EXPECT_NEAR(rb.c, 0.03, 1e-15);
  EXPECT_NEAR(rb.j, 0.4, 1e-14);

  EXPECT_THROW(task_aggregate(std::vector<StepOutcome>{}, 1.0), UsageError);
}

TEST(Aggregate, PermutationInvariant) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<StepOutcome> steps;
  for (int i = 0; i < 9; ++i) steps.push_back({Venue::Edge, 0, 0, u(rng), 0.1 * u(rng)});
  const auto base = task_aggregate(steps, 10.0);
  for (int k = 0; k < 20; ++k) {
    std::shuffle(steps.begin(), steps.end(), rng);
    const auto r = task_aggregate(steps, 10.0);
    EXPECT_NEAR(r.q, base.q, 1e-15);
    EXPECT_NEAR(r.c, base.c, 1e-15);
    EXPECT_NEAR(r.j, base.j, 1e-14);
  }
}

TEST(ScoreModel, DefaultExamples) {
  const auto m = default_score_model();
  EXPECT_NEAR(m.rho(0.0), 100.0, 1e-12);
  EXPECT_GT(m.rho(1.0), m.rho(2.0));
  for (double s : {-6.0, 0.0, 3.3, 12.0}) EXPECT_DOUBLE_EQ(m.delta_c(s), 0.01);
}

TEST(ScoreModel, AssumptionsOnDenseGrid) {
  const auto m = default_score_model();
  double prev = m.rho(m.lo);
  for (int i = 1; i <= 4000; ++i) {
    const double s = m.lo + (m.hi - m.lo) * i / 4000.0;
    ASSERT_GT(m.density(s), 0.0);
    ASSERT_GT(m.delta_c(s), 0.0);
    const double r = m.rho(s);
    ASSERT_LT(r, prev);
    prev = r;
  }
}

TEST(ScoreModel, ParamsValidated) {
  ScoreModelParams p;
  p.sd = 0.0;
  EXPECT_THROW(make_score_model(p), UsageError);
  p = {};
  p.hi = p.lo;
  EXPECT_THROW(make_score_model(p), UsageError);
}
