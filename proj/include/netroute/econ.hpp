#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <span>

#include "netroute/common.hpp"
#include "netroute/net_model.hpp"

namespace netroute {

struct LatencyParams {
  double edge_latency = 0.5;    // seconds per on-device step
  double cloud_compute = 0.3;   // seconds of cloud inference
  double payload_bytes = 2e6;   // uplink + downlink payload per offloaded step
};

struct CostParams {
  double alpha = 0.01;   // penalty per second of latency
  double c_tok = 4e-6;   // price per cloud token
  double lambda = 10.0;  // cost weight in J = Q - lambda * C
};

struct StepOutcome {
  Venue decision = Venue::Edge;
  double latency = 0.0;
  long tokens = 0;
  double quality = 0.0;
  double cost = 0.0;
};

inline double transmission_time(double payload_bytes, double bw) {
  if (!(bw > 0.0)) throw DomainError("transmission_time: bandwidth must be positive");
  if (payload_bytes < 0.0) throw DomainError("transmission_time: negative payload");
  return 8.0 * payload_bytes / bw;
}

inline double step_latency(Venue decision, const LatencyParams& p, const NetworkState& state) {
  if (decision == Venue::Edge) return p.edge_latency;
  return state.rtt + transmission_time(p.payload_bytes, state.bw) + p.cloud_compute;
}

inline double step_cost(double latency, double tokens, const CostParams& p) {
  return p.alpha * latency + p.c_tok * tokens;
}

// Schema violations zero the step regardless of what the evaluator thought.
inline double step_quality(bool schema_valid, double evaluator_score) {
  if (!(evaluator_score >= 0.0 && evaluator_score <= 1.0))
    throw DomainError("step_quality: evaluator score outside [0,1]");
  return schema_valid ? evaluator_score : 0.0;
}

struct TaskAggregate {
  double q = 0.0;  // mean step quality
  double c = 0.0;  // summed step cost
  double j = 0.0;  // q - lambda * c
};

inline TaskAggregate task_aggregate(std::span<const StepOutcome> steps, double lambda) {
  if (steps.empty()) throw UsageError("task_aggregate: no steps");
  TaskAggregate a;
  for (const auto& s : steps) {
    a.q += s.quality;
    a.c += s.cost;
  }
  a.q /= static_cast<double>(steps.size());
  a.j = a.q - lambda * a.c;
  return a;
}

// Conditional means of edge/cloud quality and cost given the router score, plus the score
// density. Quality here is an expected-utility proxy and is not clamped to [0,1].
struct ScoreModel {
  std::function<double(double)> density;
  std::function<double(double)> q_edge;
  std::function<double(double)> q_cloud;
  std::function<double(double)> c_edge;
  std::function<double(double)> c_cloud;
  double lo = 0.0;
  double hi = 1.0;

  double delta_q(double s) const { return q_cloud(s) - q_edge(s); }
  double delta_c(double s) const { return c_cloud(s) - c_edge(s); }
  double rho(double s) const { return delta_q(s) / delta_c(s); }
};

inline double normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

// Analytic family: f = N(mean, sd^2) truncated to [lo, hi], dQ = q_scale * e^{-s}, dC = delta_c,
// with zero edge quality and cost.
struct ScoreModelParams {
  double mean = 2.5;
  double sd = 1.5;
  double lo = -6.0;
  double hi = 12.0;
  double q_scale = 1.0;
  double delta_c = 0.01;

  void validate() const {
    if (!(sd > 0.0) || !(hi > lo) || !(delta_c > 0.0) || !(q_scale > 0.0))
      throw UsageError("score model needs sd > 0, lo < hi, delta_c > 0 and q_scale > 0");
  }
};

inline ScoreModel make_score_model(const ScoreModelParams& p) {
  p.validate();
  ScoreModel m;
  m.density = [p](double s) { return normal_pdf(s, p.mean, p.sd); };
  m.q_edge = [](double) { return 0.0; };
  m.q_cloud = [p](double s) { return p.q_scale * std::exp(-s); };
  m.c_edge = [](double) { return 0.0; };
  m.c_cloud = [p](double) { return p.delta_c; };
  m.lo = p.lo;
  m.hi = p.hi;
  return m;
}

// f = N(2.5, 1.5^2) on [-6, 12], dQ = e^{-s}, dC = 0.01, so rho(s) = 100 e^{-s}.
inline ScoreModel default_score_model() { return make_score_model({}); }

}  // namespace netroute
