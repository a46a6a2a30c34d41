#include "artoveq/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace artoveq {

LatencyRule parse_latency_rule(std::string_view name) {
  if (name == "eq4") return LatencyRule::eq4;
  if (name == "consistent") return LatencyRule::consistent;
  throw std::invalid_argument("unknown latency rule '" + std::string(name) +
                              "' (expected eq4 or consistent)");
}

std::string_view to_string(LatencyRule rule) {
  return rule == LatencyRule::eq4 ? "eq4" : "consistent";
}

void ChannelState::validate() const {
  if (!(c_min > 0.0)) throw std::invalid_argument("channel: C_min must be > 0");
  if (!(capacity >= c_min)) {
    throw std::invalid_argument("channel: capacity below C_min");
  }
  if (!(coherence > 0.0)) {
    throw std::invalid_argument("channel: coherence duration must be > 0");
  }
}

std::vector<double> ScenarioSpec::probabilities() const {
  validate();
  std::vector<double> p(max_bits);
  // Shift by the largest exponent for stability; the ratio is unchanged.
  const double top = k >= 0.0 ? k * static_cast<double>(max_bits) : k;
  double total = 0.0;
  for (std::size_t b = 1; b <= max_bits; ++b) {
    p[b - 1] = std::exp(k * static_cast<double>(b) - top);
    total += p[b - 1];
  }
  for (auto& v : p) v /= total;
  return p;
}

void ScenarioSpec::validate() const {
  if (max_bits == 0) throw std::invalid_argument("scenario: empty support");
  if (segments == 0) throw std::invalid_argument("scenario: segments must be > 0");
  if (!std::isfinite(k)) throw std::invalid_argument("scenario: k must be finite");
}

ScenarioSpec scenario(std::string_view name, std::size_t segments) {
  ScenarioSpec s;
  s.segments = segments;
  if (name == "S1") {
    s.k = 0.0;
  } else if (name == "S2") {
    s.k = -0.25;
  } else if (name == "S3") {
    s.k = 0.25;
  } else {
    throw std::invalid_argument("unknown scenario '" + std::string(name) + "'");
  }
  return s;
}

double latency(std::size_t level, std::size_t segments, double capacity,
               LatencyRule rule) {
  if (!(capacity > 0.0)) throw std::invalid_argument("latency: capacity must be > 0");
  if (segments == 0) throw std::invalid_argument("latency: segments must be > 0");
  const double l = static_cast<double>(level);
  const double m = static_cast<double>(segments);
  return rule == LatencyRule::eq4 ? l / (m * capacity) : m * l / capacity;
}

std::size_t select_level(double capacity, std::size_t segments, double tau_max,
                         std::size_t max_level, LatencyRule rule) {
  if (!(capacity > 0.0)) {
    throw std::invalid_argument("select_level: capacity must be > 0");
  }
  if (!(tau_max > 0.0)) {
    throw std::invalid_argument("select_level: tau_max must be > 0");
  }
  if (max_level == 0) throw std::invalid_argument("select_level: max_level must be > 0");
  // Latency grows with l, so scan down from the top.
  for (std::size_t l = max_level; l >= 1; --l) {
    if (latency(l, segments, capacity, rule) <= tau_max) return l;
  }
  throw InfeasibleLevel("no quantization level meets tau_max=" +
                        std::to_string(tau_max) + " at capacity " +
                        std::to_string(capacity) + "; defer transmission");
}

std::size_t draw_budget(const ScenarioSpec& spec, std::mt19937_64& rng) {
  const auto p = spec.probabilities();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  double cdf = 0.0;
  for (std::size_t b = 1; b <= p.size(); ++b) {
    cdf += p[b - 1];
    if (u < cdf) return b;
  }
  return p.size();
}

void SessionConfig::validate() const {
  scenario.validate();
  if (steps == 0) throw std::invalid_argument("session: steps must be > 0");
  if (!(tau_max > 0.0)) throw std::invalid_argument("session: tau_max must be > 0");
  if (!(capacity_scale >= 0.0)) {
    throw std::invalid_argument("session: capacity_scale must be >= 0");
  }
  if (!(coherence > 0.0)) throw std::invalid_argument("session: coherence must be > 0");
}

double interval_capacity(std::size_t bits, const SessionConfig& cfg) {
  const double m = static_cast<double>(cfg.scenario.segments);
  const double b = static_cast<double>(bits);
  if (cfg.capacity_scale > 0.0) return b * cfg.capacity_scale;
  const double unit =
      cfg.rule == LatencyRule::eq4 ? 1.0 / (m * cfg.tau_max) : m / cfg.tau_max;
  double c = b * unit;
  // Rounding can leave level b a hair over the bound; step up until it fits.
  while (latency(bits, cfg.scenario.segments, c, cfg.rule) > cfg.tau_max) {
    c = std::nextafter(c, std::numeric_limits<double>::infinity());
  }
  return c;
}

std::size_t InferenceScheme::samples() const {
  for (const auto& c : correct) {
    if (!c.empty()) return c.size();
  }
  return 0;
}

SessionResult simulate_capacities(std::span<const InferenceScheme> schemes,
                                  std::span<const double> capacities,
                                  std::span<const std::size_t> budgets,
                                  const SessionConfig& cfg) {
  cfg.validate();
  if (capacities.size() != budgets.size()) {
    throw std::invalid_argument("simulate: capacity and budget sequences differ");
  }
  if (schemes.empty()) throw std::invalid_argument("simulate: no schemes");
  const std::size_t n = schemes.front().samples();
  if (n == 0) throw std::invalid_argument("simulate: empty correctness table");

  // Per-scheme, per-level correct counts.
  std::vector<std::vector<std::size_t>> counts;
  for (const auto& s : schemes) {
    if (s.samples() != n) {
      throw std::invalid_argument("simulate: scheme '" + s.name +
                                  "' scored a different test set");
    }
    if (s.kind == InferenceScheme::Kind::fixed_rate &&
        (s.rate == 0 || s.rate > s.max_level() || s.correct[s.rate - 1].size() != n)) {
      throw std::invalid_argument("simulate: fixed-rate scheme '" + s.name +
                                  "' has no table at its rate");
    }
    std::vector<std::size_t> c;
    for (const auto& table : s.correct) {
      c.push_back(std::accumulate(table.begin(), table.end(), std::size_t{0}));
    }
    counts.push_back(std::move(c));
  }

  const std::size_t M = cfg.scenario.segments;
  SessionResult out;
  out.budget_counts.assign(cfg.scenario.max_bits, 0);
  std::vector<std::size_t> total(schemes.size(), 0);
  for (std::size_t t = 0; t < capacities.size(); ++t) {
    const double cap = capacities[t];
    const std::size_t b = budgets[t];
    if (b >= 1 && b <= out.budget_counts.size()) ++out.budget_counts[b - 1];
    for (std::size_t s = 0; s < schemes.size(); ++s) {
      const auto& scheme = schemes[s];
      TraceRecord rec;
      rec.t = t;
      rec.capacity = cap;
      rec.budget = M * b;
      rec.scheme = scheme.name;
      if (scheme.kind == InferenceScheme::Kind::adaptive) {
        try {
          const std::size_t l =
              select_level(cap, M, cfg.tau_max, scheme.max_level(), cfg.rule);
          rec.level = l;
          rec.latency = latency(l, M, cap, cfg.rule);
          rec.correct = counts[s][l - 1];
          rec.delivered = true;
        } catch (const InfeasibleLevel&) {
          rec.latency = latency(1, M, cap, cfg.rule);
        }
      } else {
        rec.latency = latency(scheme.rate, M, cap, cfg.rule);
        if (rec.latency <= cfg.tau_max) {
          rec.level = scheme.rate;
          rec.correct = counts[s][scheme.rate - 1];
          rec.delivered = true;
        }
      }
      total[s] += rec.correct;
      out.trace.push_back(std::move(rec));
    }
  }
  const double denom = static_cast<double>(capacities.size()) * static_cast<double>(n);
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    out.schemes.push_back(schemes[s].name);
    out.accuracy.push_back(static_cast<double>(total[s]) / denom);
  }
  return out;
}

SessionResult simulate_session(std::span<const InferenceScheme> schemes,
                               const SessionConfig& cfg) {
  cfg.validate();
  std::seed_seq seq{cfg.seed, std::uint64_t{0xc4a7}};
  std::mt19937_64 rng(seq);
  std::vector<double> caps;
  std::vector<std::size_t> budgets;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const std::size_t b = draw_budget(cfg.scenario, rng);
    budgets.push_back(b);
    caps.push_back(interval_capacity(b, cfg));
  }
  return simulate_capacities(schemes, caps, budgets, cfg);
}

}  // namespace artoveq
