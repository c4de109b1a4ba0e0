#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "netroute/common.hpp"
#include "netroute/net_model.hpp"
#include "netroute/toyworld.hpp"

namespace netroute {

inline double log1p_exp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double pairwise_loss(double s_pos, double s_neg) { return log1p_exp(-(s_pos - s_neg)); }

// What the reward model sees of the context.
struct RmContext {
  int last_tool = 0;
  int step = 0;
  int bucket = 0;
};

inline RmContext rm_context(const ToolCatalog& cat, const Task& task, const Context& ctx) {
  return {ctx.last_tool(cat.start_state()), std::min(ctx.k, kStepCap - 1), task.bucket()};
}

// Linear scorer over sparse indicator features of (context, action): tool transitions,
// argument values per length bucket, and a finish/position term. There is no schema-validity
// feature; schema problems only enter training through the penalty margin.
class RewardModel {
 public:
  explicit RewardModel(const ToolCatalog& cat) : n_tools_(cat.size()) {
    std::size_t off = static_cast<std::size_t>(n_tools_ + 1) * n_tools_;
    value_offset_.resize(n_tools_);
    domain_.resize(n_tools_);
    for (int t = 0; t < n_tools_; ++t) {
      for (const auto& s : cat.tools[t].slots) {
        value_offset_[t].push_back(off);
        domain_[t].push_back(static_cast<int>(s.domain.size()));
        off += s.domain.size() * kLengthBuckets;
      }
    }
    position_offset_ = off;
    off += 2 * kStepCap * kLengthBuckets;
    w_.assign(off, 0.0);
  }

  std::vector<double>& params() { return w_; }
  const std::vector<double>& params() const { return w_; }

  std::vector<std::size_t> features(const RmContext& c, const StructuredAction& a) const {
    std::vector<std::size_t> f;
    const bool known = a.tool >= 0 && a.tool < n_tools_;
    if (known) {
      const int last = std::clamp(c.last_tool, 0, n_tools_);
      f.push_back(static_cast<std::size_t>(last) * n_tools_ + a.tool);
      for (const auto& arg : a.args) {
        if (arg.slot < 0 || arg.slot >= static_cast<int>(domain_[a.tool].size())) continue;
        if (arg.value < 0 || arg.value >= domain_[a.tool][arg.slot]) continue;
        f.push_back(value_offset_[a.tool][arg.slot] + static_cast<std::size_t>(arg.value) * kLengthBuckets + c.bucket);
      }
    }
    const int fin = known && a.tool == kFinishTool ? 1 : 0;
    const int step = std::clamp(c.step, 0, kStepCap - 1);
    f.push_back(position_offset_ + (static_cast<std::size_t>(fin) * kStepCap + step) * kLengthBuckets + c.bucket);
    return f;
  }

  double score(const RmContext& c, const StructuredAction& a) const {
    double s = 0.0;
    for (auto i : features(c, a)) s += w_[i];
    return s;
  }

 private:
  int n_tools_ = 0;
  std::vector<std::vector<std::size_t>> value_offset_;
  std::vector<std::vector<int>> domain_;
  std::size_t position_offset_ = 0;
  std::vector<double> w_;
};

inline double rm_score(const RewardModel& rm, const RmContext& c, const StructuredAction& a) { return rm.score(c, a); }

struct PreferencePair {
  RmContext ctx;
  StructuredAction preferred;
  StructuredAction rejected;
  bool preferred_valid = true;
  bool rejected_valid = true;
};

struct RmTrainConfig {
  double lr = 0.5;
  int max_epochs = 40;
  int batch = 64;
  double l2 = 1e-4;
  double margin = 1.0;          // subtracted from the score of a schema-invalid candidate
  double val_fraction = 0.2;
  int patience = 3;
  std::uint64_t seed = 0;
};

struct RmTrainResult {
  double initial_loss = 0.0;
  double final_val_loss = 0.0;
  int epochs_run = 0;
  bool early_stopped = false;
};

inline double rm_pair_loss(const RewardModel& rm, const PreferencePair& p, double margin) {
  const double sp = rm.score(p.ctx, p.preferred) - (p.preferred_valid ? 0.0 : margin);
  const double sn = rm.score(p.ctx, p.rejected) - (p.rejected_valid ? 0.0 : margin);
  return pairwise_loss(sp, sn);
}

inline double rm_mean_loss(const RewardModel& rm, std::span<const PreferencePair> pairs, double margin) {
  if (pairs.empty()) return 0.0;
  // Running mean: equal losses (e.g. at zero init) give that loss exactly.
  double mean = 0.0;
  std::size_t n = 0;
  for (const auto& p : pairs) mean += (rm_pair_loss(rm, p, margin) - mean) / static_cast<double>(++n);
  return mean;
}

inline double rm_pair_accuracy(const RewardModel& rm, std::span<const PreferencePair> pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& p : pairs) ok += rm.score(p.ctx, p.preferred) > rm.score(p.ctx, p.rejected);
  return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

// Mini-batch descent on the pairwise logistic loss with L2, holding out a validation split and
// keeping the best parameters seen; stops after `patience` epochs without improvement.
inline RmTrainResult rm_train(RewardModel& rm, std::span<const PreferencePair> pairs, const RmTrainConfig& cfg) {
  if (pairs.empty()) throw UsageError("rm_train: no pairs");
  Rng rng = stream_rng(cfg.seed, {0x726dULL});
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * pairs.size()));
  if (pairs.size() < 2) n_val = 0;
  std::vector<PreferencePair> val, train;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? val : train).push_back(pairs[order[i]]);
  if (val.empty()) val = train;

  RmTrainResult res;
  res.initial_loss = rm_mean_loss(rm, train, cfg.margin);
  double best = rm_mean_loss(rm, val, cfg.margin);
  auto best_w = rm.params();
  int stale = 0;
  auto& w = rm.params();
  std::vector<std::size_t> idx(train.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (int e = 0; e < cfg.max_epochs; ++e) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch) {
      const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(cfg.batch));
      const double scale = cfg.lr / static_cast<double>(end - start);
      std::vector<std::pair<std::size_t, double>> step;
      for (std::size_t k = start; k < end; ++k) {
        const auto& p = train[idx[k]];
        const auto fp = rm.features(p.ctx, p.preferred);
        const auto fn = rm.features(p.ctx, p.rejected);
        double sp = -(p.preferred_valid ? 0.0 : cfg.margin), sn = -(p.rejected_valid ? 0.0 : cfg.margin);
        for (auto i : fp) sp += w[i];
        for (auto i : fn) sn += w[i];
        // d loss / d (sp - sn) = -sigmoid(-(sp - sn))
        const double g = 1.0 / (1.0 + std::exp(sp - sn));
        for (auto i : fp) step.push_back({i, scale * g});
        for (auto i : fn) step.push_back({i, -scale * g});
      }
      if (cfg.l2 > 0.0)
        for (double& v : w) v -= cfg.lr * 2.0 * cfg.l2 * v;
      for (auto [i, d] : step) w[i] += d;
    }
    ++res.epochs_run;
    const double v = rm_mean_loss(rm, val, cfg.margin);
    if (v < best) {
      best = v;
      best_w = w;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      res.early_stopped = true;
      break;
    }
  }
  w = best_w;
  res.final_val_loss = best;
  return res;
}

// Bounded FIFO: pushing past capacity evicts the oldest entry.
template <class T>
class BoundedFifo {
 public:
  explicit BoundedFifo(std::size_t capacity = 10000) : capacity_(capacity) {
    if (capacity == 0) throw UsageError("cache capacity must be positive");
  }

  void push(T item) {
    if (items_.size() == capacity_) {
      items_.pop_front();
      ++evicted_;
    }
    items_.push_back(std::move(item));
    ++pushed_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t pushed() const { return pushed_; }
  std::size_t evicted() const { return evicted_; }
  bool empty() const { return items_.empty(); }
  const T& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  const T& front() const { return items_.front(); }
  const T& back() const { return items_.back(); }

 private:
  std::size_t capacity_;
  std::size_t pushed_ = 0;
  std::size_t evicted_ = 0;
  std::deque<T> items_;
};

struct CachedTuple {
  int task_id = 0;
  int step = 0;
  RmContext ctx;
  StructuredAction edge_action;
  StructuredAction cloud_action;
  bool edge_valid = true;
  bool cloud_valid = true;
  double score = 0.0;
  NetworkState state;
  bool near_threshold = false;
};

struct RlEntry {
  int task_id = 0;
  int step = 0;
  EdgePolicy::Obs obs;
  EdgePolicy::Decision decision;
  double log_prob = std::numeric_limits<double>::quiet_NaN();
  double reward = 0.0;  // the router score at collection time
};

struct Caches {
  BoundedFifo<CachedTuple> rm_cache;
  BoundedFifo<RlEntry> rl_cache;

  explicit Caches(std::size_t capacity = 10000) : rm_cache(capacity), rl_cache(capacity) {}
};

inline PreferencePair preference_of(const CachedTuple& t) {
  return {t.ctx, t.cloud_action, t.edge_action, t.cloud_valid, t.edge_valid};
}

inline nlohmann::json cached_tuple_to_json(const ToolCatalog& cat, const CachedTuple& t) {
  auto act = [&](const StructuredAction& a) {
    nlohmann::json args = nlohmann::json::array();
    for (const auto& arg : a.args) args.push_back({arg.slot, arg.value});
    return nlohmann::json{{"name", a.tool >= 0 && a.tool < cat.size() ? cat.tools[a.tool].name : "?"},
                          {"args", args}, {"thought", a.thought}};
  };
  return {{"task", t.task_id},
          {"step", t.step},
          {"context", {{"last_tool", t.ctx.last_tool}, {"step", t.ctx.step}, {"bucket", t.ctx.bucket}}},
          {"edge_action", act(t.edge_action)},
          {"cloud_action", act(t.cloud_action)},
          {"edge_valid", t.edge_valid},
          {"score", round_sig(t.score)},
          {"rtt_ms", round_sig(t.state.rtt / kMs)},
          {"bw_mbps", round_sig(t.state.bw / kMbps)},
          {"near_threshold", t.near_threshold}};
}

inline void write_cache_jsonl(std::ostream& out, const ToolCatalog& cat, const BoundedFifo<CachedTuple>& cache) {
  for (const auto& t : cache) out << cached_tuple_to_json(cat, t).dump() << '\n';
}

// G_k = r_k + gamma * G_{k+1}
inline std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw UsageError("discount must be in [0,1]");
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

struct PpoConfig {
  double clip_eps = 0.2;
  double kl_beta = 0.05;
  double gamma = 0.99;
  double lr = 0.01;
  int epochs = 4;
  int anchor_period = 10;   // M
  double anchor_lr = 0.5;
  int anchor_steps = 1;

  void validate() const {
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw UsageError("clip epsilon must be in (0,1)");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw UsageError("gamma must be in (0,1]");
    if (kl_beta < 0.0 || !(lr > 0.0) || epochs < 1 || anchor_period < 1 || anchor_lr < 0.0 || anchor_steps < 0)
      throw UsageError("invalid PPO configuration");
  }
};

template <class Policy>
struct PpoSample {
  typename Policy::Obs obs;
  typename Policy::Decision decision;
  double old_log_prob = std::numeric_limits<double>::quiet_NaN();
  double advantage = 0.0;
};

struct PpoStats {
  double objective = 0.0;
  double surrogate = 0.0;
  double mean_ratio = 0.0;
  double clip_frac = 0.0;
  double kl = 0.0;
};

inline double clip_value(double r, double eps) { return std::clamp(r, 1.0 - eps, 1.0 + eps); }

// min(r A, clip(r) A)
inline double clipped_term(double ratio, double adv, double eps) {
  return std::min(ratio * adv, clip_value(ratio, eps) * adv);
}

// L = mean[min(r A, clip(r) A)] - beta * mean KL(pi || pi_old).
template <class Policy>
PpoStats ppo_objective(const Policy& pi, const Policy& old, std::span<const PpoSample<Policy>> batch,
                       const PpoConfig& cfg) {
  if (batch.empty()) throw UsageError("ppo: empty batch");
  PpoStats st;
  for (const auto& b : batch) {
    if (!std::isfinite(b.old_log_prob)) throw UsageError("ppo: sample without a stored log-probability");
    const double r = std::exp(pi.log_prob(b.obs, b.decision) - b.old_log_prob);
    st.surrogate += clipped_term(r, b.advantage, cfg.clip_eps);
    st.mean_ratio += r;
    st.clip_frac += std::abs(r - 1.0) > cfg.clip_eps ? 1.0 : 0.0;
    st.kl += pi.kl(b.obs, old);
  }
  const double n = static_cast<double>(batch.size());
  st.surrogate /= n;
  st.mean_ratio /= n;
  st.clip_frac /= n;
  st.kl /= n;
  st.objective = st.surrogate - cfg.kl_beta * st.kl;
  return st;
}

// Exact gradient of ppo_objective with respect to pi's parameters. On the clip boundary the
// unclipped branch is used.
template <class Policy>
void ppo_gradient(const Policy& pi, const Policy& old, std::span<const PpoSample<Policy>> batch,
                  const PpoConfig& cfg, std::vector<double>& grad) {
  if (batch.empty()) throw UsageError("ppo: empty batch");
  grad.assign(pi.params().size(), 0.0);
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const auto& b : batch) {
    if (!std::isfinite(b.old_log_prob)) throw UsageError("ppo: sample without a stored log-probability");
    const double r = std::exp(pi.log_prob(b.obs, b.decision) - b.old_log_prob);
    const bool unclipped = r * b.advantage <= clip_value(r, cfg.clip_eps) * b.advantage;
    if (unclipped && b.advantage != 0.0) pi.grad_log_prob(b.obs, b.decision, w * r * b.advantage, grad);
    if (cfg.kl_beta != 0.0) pi.grad_kl(b.obs, old, -w * cfg.kl_beta, grad);
  }
}

struct PpoUpdateResult {
  PpoStats first;  // at the first gradient evaluation
  PpoStats last;   // after the final step
};

// Snapshots pi_old, then takes cfg.epochs gradient-ascent steps on the batch.
template <class Policy>
PpoUpdateResult ppo_update(Policy& pi, std::span<const PpoSample<Policy>> batch, const PpoConfig& cfg) {
  cfg.validate();
  const Policy old = pi;
  PpoUpdateResult res;
  std::vector<double> grad;
  for (int e = 0; e < cfg.epochs; ++e) {
    if (e == 0) res.first = ppo_objective(pi, old, batch, cfg);
    ppo_gradient(pi, old, batch, cfg, grad);
    auto& p = pi.params();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += cfg.lr * grad[i];
  }
  res.last = ppo_objective(pi, old, batch, cfg);
  return res;
}

inline std::vector<double> standardize(std::vector<double> g) {
  if (g.empty()) return g;
  double m = 0.0;
  for (double v : g) m += v;
  m /= static_cast<double>(g.size());
  double var = 0.0;
  for (double v : g) var += (v - m) * (v - m);
  var /= static_cast<double>(g.size());
  const double sd = std::sqrt(var);
  for (double& v : g) v = sd > 1e-12 ? (v - m) / sd : v - m;
  return g;
}

// Return-to-go within each episode, minus the batch mean, standardized.
inline std::vector<double> episode_advantages(std::span<const RlEntry> entries, double gamma) {
  std::vector<double> g(entries.size());
  std::size_t i = 0;
  while (i < entries.size()) {
    std::size_t j = i;
    while (j < entries.size() && entries[j].task_id == entries[i].task_id) ++j;
    std::vector<double> r;
    for (std::size_t k = i; k < j; ++k) r.push_back(entries[k].reward);
    const auto ret = discounted_returns(r, gamma);
    for (std::size_t k = i; k < j; ++k) g[k] = ret[k - i];
    i = j;
  }
  return standardize(g);
}

// Supervised (observation, target) pair drawn from the SFT data distribution.
template <class Policy>
struct AnchorSample {
  typename Policy::Obs obs;
  typename Policy::Decision target;
};

// One step on the cross-entropy of the anchor targets: the sample estimate of H(pi_SFT, pi).
template <class Policy>
void sft_anchor_step(Policy& pi, std::span<const AnchorSample<Policy>> anchor, double lr) {
  if (anchor.empty()) return;
  std::vector<double> grad(pi.params().size(), 0.0);
  const double w = 1.0 / static_cast<double>(anchor.size());
  for (const auto& a : anchor) pi.grad_log_prob(a.obs, a.target, w, grad);
  auto& p = pi.params();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += lr * grad[i];
}

// One step on the exact mean forward KL(pi_SFT || pi) over the anchor observations.
template <class Policy>
void sft_anchor_step(Policy& pi, const Policy& reference, std::span<const typename Policy::Obs> anchor, double lr) {
  if (anchor.empty()) return;
  std::vector<double> grad(pi.params().size(), 0.0);
  const double w = 1.0 / static_cast<double>(anchor.size());
  for (const auto& o : anchor) pi.grad_forward_kl(o, reference, w, grad);
  auto& p = pi.params();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grad[i];
}

template <class Policy>
double mean_forward_kl(const Policy& pi, const Policy& reference, std::span<const typename Policy::Obs> obs) {
  if (obs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& o : obs) total += reference.kl(o, pi);
  return total / static_cast<double>(obs.size());
}

// mean(r A) - eta * mean KL(pi || pi_t) - mu * mean KL(pi_SFT || pi); monitoring only.
template <class Policy>
double composite_objective(const Policy& pi, const Policy& pi_t, const Policy& sft,
                           std::span<const PpoSample<Policy>> batch, double eta, double mu) {
  if (batch.empty()) throw UsageError("composite_objective: empty batch");
  double adv = 0.0, rev = 0.0, fwd = 0.0;
  for (const auto& b : batch) {
    adv += std::exp(pi.log_prob(b.obs, b.decision) - b.old_log_prob) * b.advantage;
    if (eta != 0.0) rev += pi.kl(b.obs, pi_t);
    if (mu != 0.0) fwd += sft.kl(b.obs, pi);
  }
  const double n = static_cast<double>(batch.size());
  return adv / n - eta * rev / n - mu * fwd / n;
}

// Uniformly picks floor(fraction * |eligible|) of the steps with tau <= s <= tau + delta.
inline std::vector<std::size_t> near_threshold_sample(std::span<const std::pair<double, double>> steps, double delta,
                                                      double fraction, Rng& rng) {
  if (delta < 0.0 || !(fraction >= 0.0 && fraction <= 1.0))
    throw UsageError("near_threshold_sample: delta must be >= 0 and fraction in [0,1]");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto [s, tau] = steps[i];
    if (s >= tau && s <= tau + delta) eligible.push_back(i);
  }
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(eligible.size())));
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, eligible.size() - 1)(rng);
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(k);
  std::sort(eligible.begin(), eligible.end());
  return eligible;
}

struct TwoStageRecord {
  int update = 0;
  PpoUpdateResult ppo;
  bool anchored = false;
  double composite = 0.0;
};

// PPO updates with an SFT anchoring step after every M of them.
template <class Policy>
class TwoStageTrainer {
 public:
  TwoStageTrainer(const Policy& sft_reference, PpoConfig cfg, double eta = 0.0, double mu = 0.0)
      : sft_(sft_reference), cfg_(cfg), eta_(eta), mu_(mu) {
    cfg_.validate();
  }

  TwoStageRecord step(Policy& pi, std::span<const PpoSample<Policy>> batch,
                      std::span<const AnchorSample<Policy>> anchor_set, bool anchoring = true) {
    const Policy before = pi;
    TwoStageRecord rec;
    rec.ppo = ppo_update(pi, batch, cfg_);
    rec.update = ++updates_;
    if (anchoring && updates_ % cfg_.anchor_period == 0) {
      for (int k = 0; k < cfg_.anchor_steps; ++k) sft_anchor_step(pi, anchor_set, cfg_.anchor_lr);
      rec.anchored = true;
    }
    rec.composite = composite_objective(pi, before, sft_, batch, eta_, mu_);
    return rec;
  }

  int updates() const { return updates_; }
  const Policy& reference() const { return sft_; }
  const PpoConfig& config() const { return cfg_; }

 private:
  Policy sft_;
  PpoConfig cfg_;
  double eta_;
  double mu_;
  int updates_ = 0;
};

template <class Policy>
void two_stage_update(Policy& pi, TwoStageTrainer<Policy>& trainer, std::span<const PpoSample<Policy>> batch,
                      std::span<const AnchorSample<Policy>> anchor_set, std::vector<TwoStageRecord>& log) {
  log.push_back(trainer.step(pi, batch, anchor_set));
}

// Small dense linear-softmax policy: logits = W x with W of shape actions x dim.
class LinearSoftmaxPolicy {
 public:
  using Obs = std::vector<double>;
  using Decision = int;

  LinearSoftmaxPolicy(int actions, int dim) : actions_(actions), dim_(dim), w_(static_cast<std::size_t>(actions) * dim, 0.0) {}

  std::vector<double>& params() { return w_; }
  const std::vector<double>& params() const { return w_; }
  int actions() const { return actions_; }

  std::vector<double> probs(const Obs& x) const {
    std::vector<double> z(actions_);
    double zmax = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < actions_; ++a) {
      double v = 0.0;
      for (int i = 0; i < dim_; ++i) v += w_[a * dim_ + i] * x[i];
      z[a] = v;
      zmax = std::max(zmax, v);
    }
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - zmax);
      sum += v;
    }
    for (double& v : z) v /= sum;
    return z;
  }

  double log_prob(const Obs& x, Decision a) const { return std::log(probs(x)[a]); }

  void grad_log_prob(const Obs& x, Decision a, double w, std::vector<double>& grad) const {
    const auto p = probs(x);
    for (int b = 0; b < actions_; ++b)
      for (int i = 0; i < dim_; ++i) grad[b * dim_ + i] += w * ((b == a ? 1.0 : 0.0) - p[b]) * x[i];
  }

  double kl(const Obs& x, const LinearSoftmaxPolicy& other) const {
    const auto p = probs(x);
    const auto q = other.probs(x);
    double k = 0.0;
    for (int a = 0; a < actions_; ++a)
      if (p[a] > 0.0) k += p[a] * (std::log(p[a]) - std::log(q[a]));
    return k;
  }

  void grad_kl(const Obs& x, const LinearSoftmaxPolicy& other, double w, std::vector<double>& grad) const {
    const auto p = probs(x);
    const auto q = other.probs(x);
    std::vector<double> g(actions_);
    double g_bar = 0.0;
    for (int a = 0; a < actions_; ++a) {
      g[a] = std::log(p[a]) - std::log(q[a]);
      g_bar += p[a] * g[a];
    }
    for (int b = 0; b < actions_; ++b)
      for (int i = 0; i < dim_; ++i) grad[b * dim_ + i] += w * p[b] * (g[b] - g_bar) * x[i];
  }

  void grad_forward_kl(const Obs& x, const LinearSoftmaxPolicy& ref, double w, std::vector<double>& grad) const {
    const auto p = probs(x);
    const auto r = ref.probs(x);
    for (int b = 0; b < actions_; ++b)
      for (int i = 0; i < dim_; ++i) grad[b * dim_ + i] += w * (p[b] - r[b]) * x[i];
  }

 private:
  int actions_;
  int dim_;
  std::vector<double> w_;
};

inline double categorical_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw UsageError("categorical_kl: size mismatch");
  double k = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    k += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return k;
}

}  // namespace netroute
