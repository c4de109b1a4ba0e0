#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "netroute/common.hpp"

namespace netroute {

// Units are seconds and bits per second everywhere inside the library.
struct NetworkState {
  double rtt = 0.0;
  double bw = 0.0;

  friend bool operator==(const NetworkState&, const NetworkState&) = default;
};

inline constexpr double kMbps = 1e6;
inline constexpr double kMs = 1e-3;

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double x) const { return x >= lo && x <= hi; }
  double clamp(double x) const { return std::clamp(x, lo, hi); }
};

class Regime {
 public:
  Regime(std::string name, Range bw_range, Range rtt_range)
      : name_(std::move(name)), bw_(bw_range), rtt_(rtt_range) {
    // lo == hi is accepted as a degenerate (constant) regime.
    auto check = [this](const Range& r, const char* what) {
      if (!(r.lo > 0.0) || !(r.hi >= r.lo) || !std::isfinite(r.hi))
        throw UsageError("regime " + name_ + ": invalid " + what + " range");
    };
    check(bw_, "bandwidth");
    check(rtt_, "rtt");
  }

  const std::string& name() const { return name_; }
  const Range& bw_range() const { return bw_; }
  const Range& rtt_range() const { return rtt_; }
  NetworkState midpoint() const { return {rtt_.mid(), bw_.mid()}; }
  bool contains(const NetworkState& s) const { return rtt_.contains(s.rtt) && bw_.contains(s.bw); }

 private:
  std::string name_;
  Range bw_;
  Range rtt_;
};

inline Regime good_regime() { return {"GOOD", {120 * kMbps, 200 * kMbps}, {20 * kMs, 40 * kMs}}; }
inline Regime mid_regime() { return {"MID", {30 * kMbps, 80 * kMbps}, {40 * kMs, 80 * kMs}}; }
inline Regime bad_regime() { return {"BAD", {5 * kMbps, 15 * kMbps}, {80 * kMs, 130 * kMs}}; }

struct RegimeTable {
  std::vector<Regime> regimes{good_regime(), mid_regime(), bad_regime()};

  const Regime& find(const std::string& name) const {
    for (const auto& r : regimes)
      if (r.name() == name) return r;
    throw UsageError("unknown regime '" + name + "'");
  }
};

struct DriftParams {
  double sigma_rtt = 2 * kMs;
  double sigma_bw = 2 * kMbps;
  bool clamp = true;
};

struct KappaParams {
  double rtt_ref = 60 * kMs;
  double bw_ref = 55 * kMbps;
  double c_ref = 4e-6;
  double exp_rtt = 1.0;
  double exp_bw = 1.0;
  double exp_price = 1.0;
};

inline NetworkState sample_regime_state(const Regime& regime, Rng& rng) {
  auto draw = [&rng](const Range& r) {
    if (r.hi == r.lo) return r.lo;
    return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
  };
  NetworkState s;
  s.rtt = draw(regime.rtt_range());
  s.bw = draw(regime.bw_range());
  return s;
}

// One Gauss-Markov step with independent RTT/BW jitter. Without clamping, coordinates are
// floored at a tiny positive value so the state stays physical.
inline NetworkState gauss_markov_step(const NetworkState& state, const DriftParams& drift,
                                      const Regime& regime, Rng& rng) {
  if (!(drift.sigma_rtt >= 0.0) || !(drift.sigma_bw >= 0.0))
    throw UsageError("drift sigmas must be nonnegative");
  std::normal_distribution<double> n01(0.0, 1.0);
  const double e_rtt = n01(rng);
  const double e_bw = n01(rng);
  NetworkState next{state.rtt + drift.sigma_rtt * e_rtt, state.bw + drift.sigma_bw * e_bw};
  if (drift.clamp) {
    next.rtt = regime.rtt_range().clamp(next.rtt);
    next.bw = regime.bw_range().clamp(next.bw);
  } else {
    next.rtt = std::max(next.rtt, 1e-9);
    next.bw = std::max(next.bw, 1.0);
  }
  return next;
}

// Power-law cost scaling: increasing in RTT and price, decreasing in bandwidth.
inline double kappa(const NetworkState& state, double price, const KappaParams& p) {
  if (!(state.rtt > 0.0) || !(state.bw > 0.0) || !(price > 0.0))
    throw DomainError("kappa requires positive rtt, bandwidth and price");
  return std::pow(price / p.c_ref, p.exp_price) * std::pow(state.rtt / p.rtt_ref, p.exp_rtt) *
         std::pow(p.bw_ref / state.bw, p.exp_bw);
}

struct ScheduleSegment {
  std::string regime;
  int steps = 0;
};

struct TraceStep {
  std::string regime;
  NetworkState state;
};

using Trace = std::vector<TraceStep>;

// Each segment restarts from a fresh regime sample, then drifts. Pure in (schedule, drift, seed).
inline Trace make_trace(const std::vector<ScheduleSegment>& schedule, const DriftParams& drift,
                        std::uint64_t seed, const RegimeTable& table = {}) {
  if (schedule.empty()) throw UsageError("trace schedule is empty");
  Trace trace;
  for (std::size_t seg = 0; seg < schedule.size(); ++seg) {
    const auto& segment = schedule[seg];
    if (segment.steps < 0) throw UsageError("trace segment with negative step count");
    const Regime& regime = table.find(segment.regime);
    if (segment.steps == 0) continue;
    Rng rng = stream_rng(seed, {0x7472616365ULL, seg});
    NetworkState s = sample_regime_state(regime, rng);
    trace.push_back({regime.name(), s});
    for (int k = 1; k < segment.steps; ++k) {
      s = gauss_markov_step(s, drift, regime, rng);
      trace.push_back({regime.name(), s});
    }
  }
  return trace;
}

inline void write_trace_csv(std::ostream& out, const Trace& trace) {
  out << "step,regime,rtt_ms,bw_mbps\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out << i << ',' << trace[i].regime << ',' << format_fixed(trace[i].state.rtt / kMs, 6) << ','
        << format_fixed(trace[i].state.bw / kMbps, 6) << '\n';
  }
}

inline Trace read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("step,regime,rtt_ms,bw_mbps", 0) != 0)
    throw UsageError("trace file: missing header 'step,regime,rtt_ms,bw_mbps'");
  Trace trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string step, regime, rtt, bw;
    if (!std::getline(ss, step, ',') || !std::getline(ss, regime, ',') ||
        !std::getline(ss, rtt, ',') || !std::getline(ss, bw, ','))
      throw UsageError("trace file: malformed row '" + line + "'");
    TraceStep t{regime, {std::stod(rtt) * kMs, std::stod(bw) * kMbps}};
    if (!(t.state.rtt > 0.0) || !(t.state.bw > 0.0))
      throw UsageError("trace file: non-positive state in row '" + line + "'");
    trace.push_back(std::move(t));
  }
  return trace;
}

}  // namespace netroute
