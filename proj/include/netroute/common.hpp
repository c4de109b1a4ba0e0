#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace netroute {

// Invalid numeric input (non-positive bandwidth, score outside [0,1], ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Caller misuse: empty inputs, unsorted grids, bad config values. Maps to exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Something failed while running (e.g. a trace ran out of states). Maps to exit code 3.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Venue { Edge, Cloud };

inline const char* venue_name(Venue v) { return v == Venue::Edge ? "edge" : "cloud"; }

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent, reproducible random stream keyed by (seed, keys...). Used so that the
// randomness of one task step never depends on what happened in earlier steps.
inline Rng stream_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(seed);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k));
  return Rng(h);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Index drawn from a normalized probability vector.
template <class Probs>
std::size_t sample_categorical(const Probs& probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0.0) last_positive = i;
    acc += probs[i];
    if (u < acc) return i;
  }
  return last_positive;
}

inline std::string format_fixed(double x, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
  return buf;
}

inline std::string format_sig(double x, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

// Rounds to `digits` significant digits so JSON writers emit the shortest equivalent form.
inline double round_sig(double x, int digits = 9) {
  if (!std::isfinite(x) || x == 0.0) return x;
  return std::strtod(format_sig(x, digits).c_str(), nullptr);
}

inline double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double variance_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

}  // namespace netroute
