#pragma once

// Time-varying bit pipe: latency-constrained level selection, the skewed
// budget distributions of the dynamic-channel scenarios and a session
// simulator that scores inference schemes step by step.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace artoveq {

enum class LatencyRule {
  eq4,         // l / (M * C) <= tau_max
  consistent,  // B / C = M * l / C <= tau_max
};

LatencyRule parse_latency_rule(std::string_view name);
std::string_view to_string(LatencyRule rule);

struct ChannelState {
  double capacity = 1.0;   // bits per time unit
  double coherence = 1.0;  // time units per constant-capacity interval
  double c_min = 1.0;

  void validate() const;
};

struct ScenarioSpec {
  double k = 0.0;
  std::size_t max_bits = 8;  // support is 1..max_bits
  std::size_t segments = 4;

  // Pr(b) = exp(k b) / sum_b' exp(k b'), index b-1.
  std::vector<double> probabilities() const;
  void validate() const;
};

// Named scenarios: S1 uniform, S2 low-rate heavy, S3 high-rate heavy.
ScenarioSpec scenario(std::string_view name, std::size_t segments = 4);

class InfeasibleLevel : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Latency of sending one level-l feature block over capacity C.
double latency(std::size_t level, std::size_t segments, double capacity,
               LatencyRule rule);

// Largest l in 1..max_level whose latency stays within tau_max. Throws
// InfeasibleLevel when even l = 1 violates the bound; the caller must defer.
std::size_t select_level(double capacity, std::size_t segments, double tau_max,
                         std::size_t max_level,
                         LatencyRule rule = LatencyRule::eq4);

// Per-codebook bits b in 1..max_bits (total budget B = M * b), by inverse CDF.
std::size_t draw_budget(const ScenarioSpec& spec, std::mt19937_64& rng);

struct SessionConfig {
  ScenarioSpec scenario;
  std::size_t steps = 1000;
  double tau_max = 0.02;
  // Capacity per budget bit. 0 picks the value at which the latency rule
  // admits exactly the drawn level.
  double capacity_scale = 0.0;
  LatencyRule rule = LatencyRule::eq4;
  double coherence = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Capacity of an interval whose drawn budget is b bits per segment.
double interval_capacity(std::size_t bits, const SessionConfig& cfg);

struct InferenceScheme {
  enum class Kind { adaptive, fixed_rate };

  std::string name;
  Kind kind = Kind::adaptive;
  std::size_t rate = 0;  // fixed-rate schemes only
  // correct[l-1][i]: sample i classified correctly at level l. Fixed-rate
  // schemes use correct[rate-1] only.
  std::vector<std::vector<std::uint8_t>> correct;

  std::size_t max_level() const noexcept { return correct.size(); }
  std::size_t samples() const;
};

struct TraceRecord {
  std::size_t t = 0;
  double capacity = 0.0;
  std::size_t budget = 0;  // B_t = M * b
  std::size_t level = 0;   // 0 when nothing was delivered
  double latency = 0.0;
  std::string scheme;
  std::size_t correct = 0;
  bool delivered = false;
};

struct SessionResult {
  std::vector<std::string> schemes;
  std::vector<double> accuracy;
  std::vector<TraceRecord> trace;
  std::vector<std::size_t> budget_counts;  // index b-1
};

// Explicit capacity sequence; every step evaluates the whole test set.
SessionResult simulate_capacities(std::span<const InferenceScheme> schemes,
                                  std::span<const double> capacities,
                                  std::span<const std::size_t> budgets,
                                  const SessionConfig& cfg);

// Draws one budget per coherence interval from the scenario distribution.
SessionResult simulate_session(std::span<const InferenceScheme> schemes,
                               const SessionConfig& cfg);

}  // namespace artoveq
