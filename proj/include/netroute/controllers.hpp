#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "netroute/common.hpp"
#include "netroute/net_model.hpp"

namespace netroute {

struct RouteDecision {
  Venue choice = Venue::Edge;
  double score = 0.0;
  double threshold_or_prob = 0.0;
};

// Edge iff s >= tau; the boundary stays on the edge.
inline RouteDecision route_fixed(double s, double tau) {
  return {s >= tau ? Venue::Edge : Venue::Cloud, s, tau};
}

struct NormBounds {
  Range rtt{20 * kMs, 130 * kMs};
  Range bw{5 * kMbps, 200 * kMbps};

  void validate() const {
    if (!(rtt.hi > rtt.lo) || !(bw.hi > bw.lo)) throw UsageError("normalization bounds must satisfy lo < hi");
  }
};

inline double min_max(double x, const Range& r) {
  if (!(r.hi > r.lo)) return 0.0;
  return std::clamp((x - r.lo) / (r.hi - r.lo), 0.0, 1.0);
}

struct FuncDynParams {
  double tau0 = 0.0;
  double a_rtt = 1.0;
  double b_bw = 0.5;
  double g_hist = 0.5;
  NormBounds norm;

  void validate() const {
    if (a_rtt < 0.0 || b_bw < 0.0 || g_hist < 0.0)
      throw UsageError("funcdyn coefficients must be nonnegative");
    norm.validate();
  }
};

inline double funcdyn_threshold_normalized(const FuncDynParams& p, double rtt_norm, double bw_norm,
                                           double q_hat) {
  return p.tau0 - p.a_rtt * rtt_norm + p.b_bw * bw_norm - p.g_hist * q_hat;
}

inline double funcdyn_threshold(const FuncDynParams& p, const NetworkState& state, double q_hat) {
  return funcdyn_threshold_normalized(p, min_max(state.rtt, p.norm.rtt), min_max(state.bw, p.norm.bw),
                                      q_hat);
}

// Shifts tau0 so the average threshold over a calibration window equals `target`.
inline double funcdyn_centered_tau0(const FuncDynParams& p, std::span<const NetworkState> states,
                                    std::span<const double> q_hats, double target) {
  if (states.empty() || states.size() != q_hats.size())
    throw UsageError("funcdyn centering needs matching nonempty state and q_hat windows");
  double offset = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    FuncDynParams zero = p;
    zero.tau0 = 0.0;
    offset += funcdyn_threshold(zero, states[i], q_hats[i]);
  }
  offset /= static_cast<double>(states.size());
  return target - offset;
}

// Min-max bounds of the four PolicyNet inputs.
struct PolicyNetNorm {
  NormBounds net;
  Range score{0.0, 1.0};
};

using PolicyFeatures = std::array<double, 4>;  // (rtt_norm, bw_norm, s_norm, q_hat)

inline PolicyFeatures policy_features(const PolicyNetNorm& norm, const NetworkState& state, double s,
                                      double q_hat) {
  return {min_max(state.rtt, norm.net.rtt), min_max(state.bw, norm.net.bw), min_max(s, norm.score),
          q_hat};
}

inline double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

class PolicyNet {
 public:
  PolicyNet() : PolicyNet(std::vector<int>{4, 50, 50, 1}) {}

  explicit PolicyNet(std::vector<int> widths) : widths_(std::move(widths)) {
    if (widths_.size() < 2 || widths_.front() != 4 || widths_.back() != 1)
      throw UsageError("PolicyNet widths must start at 4 and end at 1");
    for (int w : widths_)
      if (w < 1) throw UsageError("PolicyNet widths must be positive");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      offsets_.push_back(n);
      n += static_cast<std::size_t>(widths_[l]) * widths_[l + 1] + widths_[l + 1];
    }
    params_.assign(n, 0.0);
  }

  const std::vector<int>& widths() const { return widths_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }
  PolicyNetNorm& norm() { return norm_; }
  const PolicyNetNorm& norm() const { return norm_; }
  static constexpr const char* activation() { return "tanh"; }

  // Glorot-uniform weights, zero biases.
  void init_random(std::uint64_t seed) {
    Rng rng = stream_rng(seed, {0x706e6574ULL});
    std::fill(params_.begin(), params_.end(), 0.0);
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      const double limit = std::sqrt(6.0 / (in + out));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (int k = 0; k < in * out; ++k) params_[offsets_[l] + k] = u(rng);
    }
  }

  double& bias(std::size_t layer, int unit) {
    return params_[offsets_[layer] + static_cast<std::size_t>(widths_[layer]) * widths_[layer + 1] + unit];
  }

  // Cloud probability.
  double forward(const PolicyFeatures& x) const {
    for (double v : x)
      if (!std::isfinite(v)) throw DomainError("policynet_forward: non-finite feature");
    std::vector<std::vector<double>> acts;
    return forward_impl(x, acts);
  }

  // Gradient of the BCE loss for one sample, accumulated into grad (scaled by `weight`).
  double accumulate_grad(const PolicyFeatures& x, int y, double weight, std::vector<double>& grad) const {
    std::vector<std::vector<double>> acts;
    const double z_out = forward_logit(x, acts);
    const double p = logistic(z_out);
    const double loss = bce_from_logit(z_out, y);
    const std::size_t layers = widths_.size() - 1;
    std::vector<double> delta{(p - y) * weight};
    for (std::size_t l = layers; l-- > 0;) {
      const int in = widths_[l], out = widths_[l + 1];
      const auto& a_in = acts[l];
      const std::size_t w0 = offsets_[l];
      const std::size_t b0 = w0 + static_cast<std::size_t>(in) * out;
      for (int o = 0; o < out; ++o) {
        grad[b0 + o] += delta[o];
        for (int i = 0; i < in; ++i) grad[w0 + static_cast<std::size_t>(o) * in + i] += delta[o] * a_in[i];
      }
      if (l == 0) break;
      std::vector<double> prev(in, 0.0);
      for (int i = 0; i < in; ++i) {
        double s = 0.0;
        for (int o = 0; o < out; ++o) s += params_[w0 + static_cast<std::size_t>(o) * in + i] * delta[o];
        const double a = a_in[i];
        prev[i] = s * (1.0 - a * a);
      }
      delta = std::move(prev);
    }
    return loss;
  }

  static double bce_from_logit(double z, int y) {
    // log(1 + e^{-z}) for y = 1, log(1 + e^{z}) for y = 0, computed stably.
    const double t = y == 1 ? -z : z;
    return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
  }

  double loss(std::span<const PolicyFeatures> xs, std::span<const int> ys) const {
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::vector<std::vector<double>> acts;
      total += bce_from_logit(forward_logit(xs[i], acts), ys[i]);
    }
    return xs.empty() ? 0.0 : total / static_cast<double>(xs.size());
  }

  Venue decide(const PolicyFeatures& x) const { return forward(x) > 0.5 ? Venue::Cloud : Venue::Edge; }

  RouteDecision route(const NetworkState& state, double s, double q_hat) const {
    const double p = forward(policy_features(norm_, state, s, q_hat));
    return {p > 0.5 ? Venue::Cloud : Venue::Edge, s, p};
  }

 private:
  double forward_logit(const PolicyFeatures& x, std::vector<std::vector<double>>& acts) const {
    acts.clear();
    acts.emplace_back(x.begin(), x.end());
    const std::size_t layers = widths_.size() - 1;
    double z_out = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      const std::size_t w0 = offsets_[l];
      const std::size_t b0 = w0 + static_cast<std::size_t>(in) * out;
      std::vector<double> next(out);
      for (int o = 0; o < out; ++o) {
        double z = params_[b0 + o];
        for (int i = 0; i < in; ++i) z += params_[w0 + static_cast<std::size_t>(o) * in + i] * acts[l][i];
        next[o] = z;
      }
      if (l + 1 == layers) {
        z_out = next[0];
      } else {
        for (double& v : next) v = std::tanh(v);
        acts.push_back(std::move(next));
      }
    }
    return z_out;
  }

  double forward_impl(const PolicyFeatures& x, std::vector<std::vector<double>>& acts) const {
    return logistic(forward_logit(x, acts));
  }

  std::vector<int> widths_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
  PolicyNetNorm norm_;
};

inline double policynet_forward(const PolicyNet& net, const PolicyFeatures& x) { return net.forward(x); }

struct PairedOutcome {
  double q_edge = 0.0;
  double c_edge = 0.0;
  double q_cloud = 0.0;
  double c_cloud = 0.0;
};

// 1 (Cloud) iff the cloud utility is strictly larger.
inline std::vector<int> policynet_labels(std::span<const PairedOutcome> paired, double lambda) {
  if (paired.empty()) throw UsageError("policynet_labels: empty input");
  std::vector<int> y;
  y.reserve(paired.size());
  for (const auto& p : paired) y.push_back(p.q_cloud - lambda * p.c_cloud > p.q_edge - lambda * p.c_edge ? 1 : 0);
  return y;
}

struct TrainHyper {
  double lr = 0.05;
  int epochs = 200;
  int batch = 32;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> loss_history;  // full-set loss before training, then after each epoch
  bool single_class = false;
  double accuracy = 0.0;
};

inline TrainResult policynet_train(PolicyNet& net, std::span<const PolicyFeatures> xs,
                                   std::span<const int> ys, const TrainHyper& hyper) {
  if (xs.empty() || xs.size() != ys.size()) throw UsageError("policynet_train: empty or mismatched dataset");
  if (hyper.batch < 1 || hyper.epochs < 0 || !(hyper.lr > 0.0)) throw UsageError("policynet_train: bad hyperparameters");
  TrainResult out;
  int ones = 0;
  for (int y : ys) {
    if (y != 0 && y != 1) throw UsageError("policynet_train: labels must be 0 or 1");
    ones += y;
  }
  out.single_class = ones == 0 || ones == static_cast<int>(ys.size());
  Rng rng = stream_rng(hyper.seed, {0x747261696eULL});
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(net.param_count());
  out.loss_history.push_back(net.loss(xs, ys));
  for (int e = 0; e < hyper.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch));
      std::fill(grad.begin(), grad.end(), 0.0);
      const double w = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) net.accumulate_grad(xs[order[k]], ys[order[k]], w, grad);
      auto& p = net.params();
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= hyper.lr * grad[i];
    }
    out.loss_history.push_back(net.loss(xs, ys));
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    correct += (net.forward(xs[i]) > 0.5 ? 1 : 0) == ys[i];
  out.accuracy = static_cast<double>(correct) / static_cast<double>(xs.size());
  return out;
}

inline nlohmann::json range_to_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

inline Range range_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw UsageError("expected a [lo, hi] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline nlohmann::json policynet_to_json(const PolicyNet& net) {
  nlohmann::json j;
  j["format"] = "netroute-policynet";
  j["widths"] = net.widths();
  j["activation"] = PolicyNet::activation();
  j["norm"] = {{"rtt_s", range_to_json(net.norm().net.rtt)},
               {"bw_bps", range_to_json(net.norm().net.bw)},
               {"score", range_to_json(net.norm().score)}};
  j["params"] = net.params();
  return j;
}

inline PolicyNet policynet_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "netroute-policynet") throw UsageError("not a policynet checkpoint");
    if (j.at("activation") != PolicyNet::activation()) throw UsageError("unsupported activation");
    PolicyNet net(j.at("widths").get<std::vector<int>>());
    auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != net.param_count()) throw UsageError("checkpoint parameter count mismatch");
    net.params() = std::move(params);
    const auto& n = j.at("norm");
    net.norm().net.rtt = range_from_json(n.at("rtt_s"));
    net.norm().net.bw = range_from_json(n.at("bw_bps"));
    net.norm().score = range_from_json(n.at("score"));
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad policynet checkpoint: ") + e.what());
  }
}

}  // namespace netroute
