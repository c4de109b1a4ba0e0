#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "netroute/common.hpp"
#include "netroute/econ.hpp"

namespace netroute {

struct FrontierPoint {
  double tau = 0.0;
  double q = 0.0;
  double c = 0.0;
  double j = 0.0;
};

struct QuadratureSpec {
  int node_count = 512;
  int panel_order = 16;
};

struct GaussLegendreRule {
  std::vector<double> nodes;    // on [-1, 1]
  std::vector<double> weights;
};

// Newton iteration on P_n from the Chebyshev-like initial guesses.
inline GaussLegendreRule gauss_legendre(int n) {
  if (n < 1) throw UsageError("gauss_legendre: order must be positive");
  GaussLegendreRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    if (n == 1) p0 = 1.0;
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  return rule;
}

inline const GaussLegendreRule& cached_rule(int order) {
  static thread_local std::vector<std::optional<GaussLegendreRule>> cache(65);
  if (order < 1 || order > 64) throw UsageError("quadrature panel order must be in [1, 64]");
  auto& slot = cache[order];
  if (!slot) slot = gauss_legendre(order);
  return *slot;
}

// Composite Gauss-Legendre over [a, b] with roughly `nodes` evaluation points.
template <class F>
double integrate(F&& f, double a, double b, int nodes, int panel_order = 16) {
  if (b <= a) return 0.0;
  const auto& rule = cached_rule(panel_order);
  const int panels = std::max(1, nodes / panel_order);
  const double width = (b - a) / panels;
  double total = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double left = a + p * width;
    const double half = 0.5 * width;
    const double center = left + half;
    double part = 0.0;
    for (int i = 0; i < panel_order; ++i) part += rule.weights[i] * f(center + half * rule.nodes[i]);
    total += half * part;
  }
  return total;
}

inline void check_quadrature(const QuadratureSpec& quad) {
  if (quad.node_count < 64) throw UsageError("quadrature needs at least 64 nodes");
}

// Threshold policy: scores >= tau stay on the edge, scores below go to the cloud, with the cloud
// cost differential scaled by kappa.
inline FrontierPoint frontier_point(const ScoreModel& m, double tau, double kappa, double lambda,
                                    const QuadratureSpec& quad = {}) {
  check_quadrature(quad);
  if (!(tau >= m.lo && tau <= m.hi)) throw DomainError("frontier_point: tau outside the support");
  const int half = quad.node_count / 2;
  const double q_edge = integrate([&](double s) { return m.q_edge(s) * m.density(s); }, tau, m.hi,
                                  half, quad.panel_order);
  const double q_cloud = integrate([&](double s) { return m.q_cloud(s) * m.density(s); }, m.lo,
                                   tau, half, quad.panel_order);
  const double c_edge_kept = integrate([&](double s) { return m.c_edge(s) * m.density(s); }, tau,
                                       m.hi, half, quad.panel_order);
  const double c_cloud = integrate(
      [&](double s) { return (m.c_edge(s) + kappa * m.delta_c(s)) * m.density(s); }, m.lo, tau,
      half, quad.panel_order);
  FrontierPoint pt;
  pt.tau = tau;
  pt.q = q_edge + q_cloud;
  pt.c = c_edge_kept + c_cloud;
  pt.j = pt.q - lambda * pt.c;
  return pt;
}

inline std::vector<FrontierPoint> frontier_sweep(const ScoreModel& m, std::span<const double> grid,
                                                 double kappa, double lambda,
                                                 const QuadratureSpec& quad = {}) {
  if (!std::is_sorted(grid.begin(), grid.end()))
    throw UsageError("frontier_sweep: tau grid must be sorted ascending");
  std::vector<FrontierPoint> out;
  out.reserve(grid.size());
  for (double tau : grid) out.push_back(frontier_point(m, tau, kappa, lambda, quad));
  return out;
}

inline std::vector<double> linspace(double lo, double hi, int n) {
  if (n < 1) throw UsageError("linspace: need at least one node");
  std::vector<double> g(n);
  if (n == 1) {
    g[0] = lo;
    return g;
  }
  for (int i = 0; i < n; ++i) g[i] = lo + (hi - lo) * i / (n - 1);
  g.back() = hi;
  return g;
}

class NoInteriorOptimum : public std::runtime_error {
 public:
  NoInteriorOptimum(const std::string& what, double better_endpoint)
      : std::runtime_error(what), better_endpoint_(better_endpoint) {}
  // Bracket endpoint with the larger J(tau), for callers that fall back.
  double better_endpoint() const { return better_endpoint_; }

 private:
  double better_endpoint_;
};

// Bisection on rho(tau) - lambda * kappa.
inline double solve_optimal_tau(const ScoreModel& m, double lambda, double kappa, double lo,
                                double hi, double tol = 1e-10) {
  if (!(lo < hi)) throw UsageError("solve_optimal_tau: empty bracket");
  const double target = lambda * kappa;
  auto g = [&](double t) { return m.rho(t) - target; };
  double g_lo = g(lo);
  const double g_hi = g(hi);
  if (g_lo == 0.0) return lo;
  if (g_hi == 0.0) return hi;
  if ((g_lo > 0.0) == (g_hi > 0.0)) {
    // rho above lambda*kappa everywhere means offloading always pays: largest tau is best.
    throw NoInteriorOptimum("no interior optimum: rho - lambda*kappa has no sign change",
                            g_lo > 0.0 ? hi : lo);
  }
  double a = lo, b = hi;
  while (b - a > tol) {
    const double mid = 0.5 * (a + b);
    if (mid == a || mid == b) break;
    const double gm = g(mid);
    if (gm == 0.0) return mid;
    if ((gm > 0.0) == (g_lo > 0.0)) {
      a = mid;
      g_lo = gm;
    } else {
      b = mid;
    }
  }
  return 0.5 * (a + b);
}

// Exhaustive argmax of J over the grid; ties keep the smaller tau.
inline double brute_force_tau(const ScoreModel& m, double lambda, double kappa,
                              std::span<const double> grid, const QuadratureSpec& quad = {}) {
  if (grid.empty()) throw UsageError("brute_force_tau: empty grid");
  if (!std::is_sorted(grid.begin(), grid.end()))
    throw UsageError("brute_force_tau: grid must be sorted ascending");
  double best_tau = grid[0];
  double best_j = frontier_point(m, grid[0], kappa, lambda, quad).j;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double j = frontier_point(m, grid[i], kappa, lambda, quad).j;
    if (j > best_j) {
      best_j = j;
      best_tau = grid[i];
    }
  }
  return best_tau;
}

inline double rho_derivative(const ScoreModel& m, double tau, double h = 1e-5) {
  return (m.rho(tau + h) - m.rho(tau - h)) / (2.0 * h);
}

// Implicit-function derivative of the optimal threshold with respect to kappa.
inline double dtau_dkappa(const ScoreModel& m, double lambda, double kappa, double tol = 1e-12) {
  const double tau = solve_optimal_tau(m, lambda, kappa, m.lo, m.hi, tol);
  const double h = 1e-5 * std::max(1.0, std::abs(tau));
  return lambda / rho_derivative(m, tau, h);
}

struct Tau0Record {
  double score = 0.0;
  double j_edge = 0.0;
  double j_cloud = 0.0;
};

struct Tau0Result {
  double tau0 = 0.0;
  double utility = 0.0;
  std::size_t candidates = 0;
};

inline constexpr double kTau0SentinelGap = 1.0;

// Empirical utility maximization over the hard threshold rule. Candidates are the midpoints
// between consecutive distinct scores plus one sentinel below the minimum and one above the
// maximum; ties go to the smallest candidate.
inline Tau0Result empirical_tau0(std::span<const Tau0Record> records) {
  if (records.empty()) throw UsageError("empirical_tau0: no records");
  std::vector<Tau0Record> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const Tau0Record& a, const Tau0Record& b) { return a.score < b.score; });
  double edge_total = 0.0;
  for (const auto& r : sorted) edge_total += r.j_edge;

  Tau0Result best;
  best.tau0 = sorted.front().score - kTau0SentinelGap;
  best.utility = edge_total;
  best.candidates = 1;
  // Moving the threshold past a block of equal scores sends the whole block to the cloud.
  double utility = edge_total;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) {
      utility += sorted[j].j_cloud - sorted[j].j_edge;
      ++j;
    }
    const double candidate =
        j < sorted.size() ? 0.5 * (sorted[i].score + sorted[j].score)
                          : sorted.back().score + kTau0SentinelGap;
    ++best.candidates;
    if (utility > best.utility) {
      best.utility = utility;
      best.tau0 = candidate;
    }
    i = j;
  }
  return best;
}

}  // namespace netroute
