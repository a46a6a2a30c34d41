#include <cmath>
#include <numeric>

#include "artoveq/channel.hpp"
#include "doctest.h"

using namespace artoveq;

namespace {

// Scheme whose per-level correctness pattern gives accuracy acc[l-1].
InferenceScheme scheme_with(std::string name, std::vector<double> acc, std::size_t samples) {
  InferenceScheme s;
  s.name = std::move(name);
  for (double a : acc) {
    std::vector<std::uint8_t> c(samples, 0);
    const auto hits = static_cast<std::size_t>(std::lround(a * static_cast<double>(samples)));
    for (std::size_t i = 0; i < hits; ++i) c[i] = 1;
    s.correct.push_back(std::move(c));
  }
  return s;
}

}  // namespace

TEST_CASE("level selection follows the latency bound") {
  CHECK(select_level(100, 4, 0.02, 8) == 8);
  CHECK(select_level(50, 4, 0.02, 8) == 4);
  CHECK(select_level(1e6, 4, 0.02, 8) == 8);
  CHECK_THROWS_AS(select_level(10, 4, 0.02, 8), InfeasibleLevel);
  CHECK(select_level(800, 4, 0.02, 8, LatencyRule::consistent) == 4);
  CHECK(latency(3, 4, 50, LatencyRule::eq4) == 3.0 / 200.0);
  CHECK(latency(3, 4, 50, LatencyRule::consistent) == 12.0 / 50.0);
}

TEST_CASE("level selection is maximal and monotone") {
  for (auto rule : {LatencyRule::eq4, LatencyRule::consistent}) {
    std::size_t prev_c = 0;
    for (double c = 10; c <= 1000; c += 7.5) {
      std::size_t prev_t = 0;
      for (double tau : {0.001, 0.003, 0.01, 0.03, 0.1}) {
        std::size_t l = 0;
        try {
          l = select_level(c, 4, tau, 8, rule);
        } catch (const InfeasibleLevel&) {
          CHECK(latency(1, 4, c, rule) > tau);
          continue;
        }
        CHECK(latency(l, 4, c, rule) <= tau);
        if (l < 8) CHECK(latency(l + 1, 4, c, rule) > tau);
        CHECK(l >= prev_t);
        prev_t = l;
      }
      const std::size_t at = [&] {
        try {
          return select_level(c, 4, 0.02, 8, rule);
        } catch (const InfeasibleLevel&) {
          return std::size_t{0};
        }
      }();
      CHECK(at >= prev_c);
      prev_c = at;
    }
  }
}

TEST_CASE("budget distributions") {
  const auto uniform = scenario("S1").probabilities();
  for (double p : uniform) CHECK(p == doctest::Approx(0.125).epsilon(1e-12));

  const auto high = scenario("S3").probabilities();
  double z = 0.0;
  for (int b = 1; b <= 8; ++b) z += std::exp(0.25 * b);
  CHECK(high[7] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
  CHECK(high[7] == doctest::Approx(0.2558).epsilon(1e-3));
  CHECK(std::accumulate(high.begin(), high.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  for (std::size_t b = 1; b < 8; ++b) CHECK(high[b] > high[b - 1]);
  const auto low = scenario("S2").probabilities();
  for (std::size_t b = 1; b < 8; ++b) CHECK(low[b] < low[b - 1]);
  CHECK_THROWS(scenario("S4"));
}

TEST_CASE("drawn budgets follow the closed form") {
  const auto spec = scenario("S2");
  std::mt19937_64 rng(123);
  std::vector<double> freq(8, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto b = draw_budget(spec, rng);
    REQUIRE(b >= 1);
    REQUIRE(b <= 8);
    freq[b - 1] += 1.0 / n;
  }
  const auto p = spec.probabilities();
  double tv = 0.0;
  for (std::size_t b = 0; b < 8; ++b) tv += 0.5 * std::abs(freq[b] - p[b]);
  CHECK(tv <= 0.01);
}

TEST_CASE("sessions score adaptive and fixed-rate schemes") {
  const std::size_t samples = 20;
  std::vector<double> acc{0.3, 0.4, 0.5, 0.6, 0.65, 0.7, 0.75, 0.8};
  auto adaptive = scheme_with("adaptive", acc, samples);
  auto one = scheme_with("one", acc, samples);
  one.kind = InferenceScheme::Kind::fixed_rate;
  one.rate = 1;
  auto eight = scheme_with("eight", acc, samples);
  eight.kind = InferenceScheme::Kind::fixed_rate;
  eight.rate = 8;
  const std::vector<InferenceScheme> schemes{adaptive, one, eight};

  std::vector<double> by_scenario;
  for (const char* name : {"S1", "S2", "S3"}) {
    SessionConfig cfg;
    cfg.scenario = scenario(name);
    cfg.steps = 4000;
    cfg.seed = 5;
    const auto r = simulate_session(schemes, cfg);
    REQUIRE(r.accuracy.size() == 3);

    // Adaptive: budget-weighted mean of the per-level accuracies.
    double weighted = 0.0;
    for (std::size_t b = 1; b <= 8; ++b) {
      weighted += acc[b - 1] * static_cast<double>(r.budget_counts[b - 1]) / 4000.0;
    }
    CHECK(r.accuracy[0] == doctest::Approx(weighted).epsilon(1e-12));
    by_scenario.push_back(r.accuracy[1]);

    // Fixed 8-bit: delivered only when the budget reaches 8 bits.
    const double share = static_cast<double>(r.budget_counts[7]) / 4000.0;
    CHECK(r.accuracy[2] == doctest::Approx(0.8 * share).epsilon(1e-12));
    if (std::string(name) == "S1") CHECK(share == doctest::Approx(0.125).epsilon(0.1));

    for (const auto& t : r.trace) {
      if (t.scheme == "adaptive") {
        CHECK(t.delivered);
        CHECK(t.latency <= cfg.tau_max);
        CHECK(t.latency == latency(t.level, 4, t.capacity, cfg.rule));
      }
    }
  }
  CHECK(by_scenario[0] == by_scenario[1]);
  CHECK(by_scenario[1] == by_scenario[2]);
  CHECK(by_scenario[0] == doctest::Approx(0.3));
}

TEST_CASE("a constant channel reduces to single-rate evaluation") {
  const std::vector<double> acc{0.2, 0.45, 0.55, 0.9};
  const std::vector<InferenceScheme> schemes{scheme_with("a", acc, 40)};
  SessionConfig cfg;
  cfg.scenario.max_bits = 4;
  cfg.steps = 10;
  const double c = interval_capacity(3, cfg);
  const std::vector<double> caps(10, c);
  const std::vector<std::size_t> budgets(10, 3);
  const auto r = simulate_capacities(schemes, caps, budgets, cfg);
  CHECK(r.accuracy[0] == doctest::Approx(0.55).epsilon(1e-12));
  CHECK(select_level(c, 4, cfg.tau_max, 4) == 3);
}

TEST_CASE("session configuration is validated") {
  SessionConfig cfg;
  cfg.tau_max = 0.0;
  CHECK_THROWS(cfg.validate());
  CHECK(parse_latency_rule("consistent") == LatencyRule::consistent);
  CHECK_THROWS(parse_latency_rule("other"));
}
