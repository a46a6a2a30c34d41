// Runs the acceptance criteria end to end and prints one PASS/FAIL line per
// criterion. Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "artoveq/channel.hpp"
#include "artoveq/harness.hpp"
#include "artoveq/io.hpp"
#include "oracles/lloyd_oracle.hpp"
#include "oracles/surrogate_oracle.hpp"
#include "test_support.hpp"

using namespace artoveq;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const char* title, const Outcome& o) {
  std::printf("criterion %2d %-34s %s  %s\n", id, title, o.pass ? "PASS" : "FAIL",
              o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- 1 -------------------------------------------------------------------

Outcome gradient_fidelity() {
  auto cfg = ExperimentConfig::parse(
      "classes = 4\ninput_dim = 6\ntrain_samples = 200\ntest_samples = 50\n"
      "M = 2\nd = 2\nencoder_hidden = 8\ndecoder_hidden = 8\nmax_level = 3\n"
      "stage1_epochs = 4\nepochs_per_level = 2\neta = 0.5\nbeta = 0.3\nsingle_rates = 1,3\n");
  cfg.finalize();
  const auto data = load_data(cfg);
  const auto run = train_artoveq<float>(cfg.network, data.train, cfg.plan);
  const auto model = run.model.cast<double>();
  auto codebook = run.codebook.cast<double>();
  const std::size_t level = 3, M = cfg.network.segments, d = cfg.network.segment_dim;

  // A snapshot a little away from the live prefix so the drift term has a
  // gradient of its own.
  auto snapshot = snapshot_prefix(codebook, std::size_t{1} << (level - 1));
  for (auto& v : snapshot.values) v += 0.01;

  std::vector<std::size_t> batch(16);
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i * 7;
  const auto lb = level_loss(model, codebook, data.train, batch, level, cfg.plan.loss, snapshot);
  grad::backward(lb.total);

  auto net = support::to_oracle(model);
  std::vector<std::vector<double>> inputs;
  std::vector<std::int32_t> labels;
  for (auto i : batch) {
    const auto f = data.train.features(i);
    inputs.emplace_back(f.begin(), f.end());
    labels.push_back(data.train.label(i));
  }
  std::vector<double> e = codebook.parameter().value().storage();
  const auto fq = oracle::freeze(net, inputs, e, M, d, level);
  std::vector<double> betas(cfg.plan.loss.beta_per_level.begin(),
                            cfg.plan.loss.beta_per_level.begin() + level);
  const double eta = cfg.plan.loss.eta_per_level[level - 1];
  std::vector<double> snap = snapshot.values;
  auto surrogate = [&] { return oracle::surrogate_loss(net, e, inputs, labels, fq, betas, eta, snap); };

  const double at_base = surrogate();
  const double value_err = std::abs(at_base - lb.total.value().item()) / std::abs(at_base);

  // Flat coordinate table: (oracle value pointer, analytic gradient).
  struct Coord {
    double* value;
    double grad;
  };
  std::vector<Coord> coords;
  auto add_mlp = [&](std::vector<oracle::Dense>& layers, const Mlp<double>& mlp) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& w = mlp.layers()[l].weight;
      const auto& b = mlp.layers()[l].bias;
      for (std::size_t i = 0; i < layers[l].w.size(); ++i)
        coords.push_back({&layers[l].w[i], w.has_grad() ? w.grad()[i] : 0.0});
      for (std::size_t i = 0; i < layers[l].b.size(); ++i)
        coords.push_back({&layers[l].b[i], b.has_grad() ? b.grad()[i] : 0.0});
    }
  };
  add_mlp(net.encoder, model.encoder());
  add_mlp(net.decoder, model.decoder());
  const auto& cbv = codebook.parameter();
  for (std::size_t i = 0; i < e.size(); ++i) coords.push_back({&e[i], cbv.has_grad() ? cbv.grad()[i] : 0.0});

  std::mt19937_64 rng(2718);
  std::vector<std::size_t> order(coords.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  // Always include a few codeword coordinates from the live prefix.
  std::vector<std::size_t> picked(order.begin(), order.begin() + 46);
  const std::size_t cb_start = coords.size() - e.size();
  for (std::size_t i = 0; i < 4; ++i) picked.push_back(cb_start + i * 3);

  const double h = 1e-4;
  double worst = 0.0;
  for (auto c : picked) {
    double* v = coords[c].value;
    const double keep = *v;
    *v = keep + h;
    const double up = surrogate();
    *v = keep - h;
    const double down = surrogate();
    *v = keep;
    const double fd = (up - down) / (2 * h);
    const double an = coords[c].grad;
    const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
    worst = std::max(worst, err);
  }

  // Straight-through: forward is the codeword, the encoder output receives
  // exactly the gradient that arrives at the quantizer output.
  const auto x = grad::Var<double>::constant(data.train.inputs<double>(batch));
  auto xe = model.encode_graph(x);
  const auto tables = LevelTables<double>::nested(codebook);
  const auto levels = uniform_levels(M, level);
  const auto idx = assign_segments<double>(xe.value().storage(), batch.size(), d, levels, tables);
  grad::Tensor<double> z(xe.shape());
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t m = 0; m < M; ++m) {
      const auto cw = tables.at(level)[static_cast<std::size_t>(idx[i * M + m])];
      std::copy(cw.begin(), cw.end(), z.values().begin() + static_cast<std::ptrdiff_t>(i * M * d + m * d));
    }
  auto q = straight_through(xe, z);
  const bool forward_exact = q.value() == z;
  grad::backward(grad::cross_entropy<double>(model.decode_graph(q), labels));
  const bool backward_exact =
      xe.has_grad() && q.has_grad() &&
      std::equal(xe.grad().begin(), xe.grad().end(), q.grad().begin(), q.grad().end());

  Outcome o;
  o.pass = worst <= 1e-4 && value_err <= 1e-12 && forward_exact && backward_exact;
  o.detail = fmt("50 coords max rel err %.2e (tol 1e-4); loss vs oracle %.1e; ST forward %s, backward %s",
                 worst, value_err, forward_exact ? "exact" : "DIFFERS",
                 backward_exact ? "exact" : "DIFFERS");
  return o;
}

// --- 2 -------------------------------------------------------------------

Outcome lbg_oracle() {
  std::mt19937_64 rng(200);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> flat(400);
  for (auto& v : flat) v = u(rng);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < 200; ++i) rows.push_back({flat[2 * i], flat[2 * i + 1]});

  Outcome o;
  std::string parts;
  for (std::size_t s : {2u, 4u, 8u}) {
    LbgConfig cfg;
    cfg.target_size = s;
    const auto r = lbg_fit<double>(flat, 2, cfg);
    const auto fit = oracle::lloyd_split_fit(rows, s);
    const double diff = std::abs(r.mean_squared_distortion - fit.stage_distortion.back().back());
    bool monotone = true;
    for (const auto& stage : r.history)
      for (std::size_t i = 1; i < stage.distortion.size(); ++i)
        monotone = monotone && stage.distortion[i] <= stage.distortion[i - 1];
    for (const auto& stage : fit.stage_distortion)
      for (std::size_t i = 1; i < stage.size(); ++i) monotone = monotone && stage[i] <= stage[i - 1];
    o.pass = o.pass && diff <= 1e-6 && monotone;
    parts += fmt("S=%zu |dD|=%.1e%s ", s, diff, monotone ? "" : " NON-MONOTONE");
  }
  o.detail = parts + "(tol 1e-6)";
  return o;
}

// --- 3 -------------------------------------------------------------------

Outcome nesting_and_minkowski() {
  auto cfg = ExperimentConfig::parse(
      "M = 4\nd = 2\nmax_level = 8\nstage1_epochs = 2\nepochs_per_level = 1\n"
      "train_samples = 400\ntest_samples = 100\n");
  cfg.finalize();
  const auto data = load_data(cfg);
  const auto art = train_artoveq<float>(cfg.network, data.train, cfg.plan);
  bool nested = art.codebook.size() == 256;
  for (std::size_t l = 2; l <= 8; ++l) {
    const auto small = art.codebook.sub_codebook(l - 1).data();
    const auto big = art.codebook.sub_codebook(l).data();
    nested = nested && small.size() * 2 == big.size() &&
             std::memcmp(small.data(), big.data(), small.size_bytes()) == 0;
  }

  auto pplan = cfg.plan;
  pplan.schedule = Schedule::progressive;
  const auto prog = train_progressive<float>(cfg.network, data.train, pplan);
  bool minkowski = true;
  std::vector<float> q{0.0f, 0.0f};  // Q_0 = {0}
  for (std::size_t l = 1; l <= 8; ++l) {
    const auto e1 = prog.codebook.difference(l, 0);
    const auto e2 = prog.codebook.difference(l, 1);
    std::vector<float> next;
    for (std::size_t r = 0; r < q.size() / 2; ++r) {
      for (const auto& e : {e1, e2})
        for (std::size_t j = 0; j < 2; ++j) next.push_back(q[r * 2 + j] + e[j]);
    }
    q = next;
    const auto mat = prog.codebook.materialize(l);
    std::set<std::pair<float, float>> distinct;
    for (std::size_t r = 0; r < mat.shape()[0]; ++r) distinct.insert({mat[r * 2], mat[r * 2 + 1]});
    minkowski = minkowski && mat.storage() == q && mat.shape()[0] == (std::size_t{1} << l) &&
                distinct.size() == (std::size_t{1} << l);
  }
  Outcome o;
  o.pass = nested && minkowski;
  o.detail = fmt("S=256 prefixes %s; progressive Q_1..Q_8 %s", nested ? "bit-identical" : "DIFFER",
                 minkowski ? "exact set sums with 2^l distinct codewords" : "MISMATCH");
  return o;
}

// --- 4, 5, 9 ---------------------------------------------------------------

struct SyntheticRun {
  std::vector<double> artoveq, fixed;
  DynamicTable table;
  double seconds = 0.0;
};

SyntheticRun synthetic_experiment(const fs::path& config) {
  const auto start = std::chrono::steady_clock::now();
  auto cfg = ExperimentConfig::load(config);
  cfg.finalize();
  const auto data = load_data(cfg);
  const std::size_t L = cfg.plan.max_level, M = cfg.network.segments;

  TaskModel<float> warm(cfg.network, cfg.seed);
  stage1_warmstart(warm, data.train, cfg.plan);

  TaskModel<float> model = warm;
  NestedCodebook<float> codebook(cfg.network.segment_dim, L);
  const auto lbg = stage2_codebook_init(model, data.train, cfg.plan.lbg);
  stage3_joint_adaptation<float>(model, codebook, lbg.codewords, data.train, cfg.plan);

  auto pmodel = warm;
  auto pcb = adapt_progressive(pmodel, data.train, cfg.plan);
  const auto fixed = train_fixed_rate_models(cfg, warm, data.train);

  SyntheticRun out;
  const auto tables = LevelTables<float>::nested(codebook);
  for (std::size_t l = 1; l <= L; ++l) {
    const auto levels = uniform_levels(M, l);
    out.artoveq.push_back(evaluate(model, tables, levels, data.test).accuracy);
    const auto& f = fixed[l - 1];
    out.fixed.push_back(
        evaluate(f.model, LevelTables<float>::nested(f.codebook), levels, data.test).accuracy);
  }
  DynamicInputs in{&model, &codebook, &pmodel, &pcb, &fixed};
  out.table = run_dynamic_table(cfg, in, data.test);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::string percent_list(const std::vector<double>& v) {
  std::string s;
  for (double a : v) s += fmt("%.1f ", 100 * a);
  if (!s.empty()) s.pop_back();
  return s;
}

Outcome rate_trend(const SyntheticRun& r) {
  std::vector<double> level;
  for (std::size_t l = 1; l <= r.artoveq.size(); ++l) level.push_back(static_cast<double>(l));
  const double gap = r.artoveq.back() - r.artoveq.front();
  const double rho = spearman(level, r.artoveq);
  Outcome o;
  o.pass = gap >= 0.10 && rho >= 0.8;
  o.detail = fmt("acc[1..8] = %s; gap %+.1f pp (need >= 10), Spearman %.3f (need >= 0.8)",
                 percent_list(r.artoveq).c_str(), 100 * gap, rho);
  return o;
}

Outcome single_codebook_gap(const SyntheticRun& r) {
  double worst = 0.0;
  std::size_t at = 0;
  for (std::size_t l = 0; l < r.artoveq.size(); ++l) {
    const double g = std::abs(r.artoveq[l] - r.fixed[l]);
    if (g > worst) worst = g, at = l + 1;
  }
  Outcome o;
  o.pass = worst <= 0.05;
  o.detail = fmt("fixed-rate acc = %s; max |gap| %.1f pp at level %zu (tol 5)",
                 percent_list(r.fixed).c_str(), 100 * worst, at);
  return o;
}

Outcome dynamic_ordering(const SyntheticRun& r) {
  const auto& t = r.table;
  const std::vector<std::string> sc{"S1", "S2", "S3"};
  const bool a = t.at("Single-Rate 1-bit", "S1") == t.at("Single-Rate 1-bit", "S2") &&
                 t.at("Single-Rate 1-bit", "S2") == t.at("Single-Rate 1-bit", "S3");
  bool b = t.at("Single-Rate 8-bit", "S2") < t.at("Single-Rate 8-bit", "S3");
  bool c = true, d = true;
  double worst_c = 0.0, worst_d = 0.0;
  for (const auto& s : sc) {
    b = b && t.at("Single-Rate 8-bit", s) < t.at("ARTOVeQ", s);
    worst_c = std::max(worst_c, std::abs(t.at("Multiple Fixed-Rate", s) - t.at("ARTOVeQ", s)));
    worst_d = std::max(worst_d, t.at("ARTOVeQ", s) - t.at("Progressive ARTOVeQ", s));
  }
  c = worst_c <= 0.05;
  d = worst_d <= 0.06;
  Outcome o;
  o.pass = a && b && c && d;
  o.detail = fmt("(a) %s (b) %s (c) %s max %.1f pp (d) %s max %.1f pp; ARTOVeQ S1/S2/S3 %.1f/%.1f/%.1f",
                 a ? "ok" : "FAIL", b ? "ok" : "FAIL", c ? "ok" : "FAIL", 100 * worst_c,
                 d ? "ok" : "FAIL", 100 * worst_d, 100 * t.at("ARTOVeQ", "S1"),
                 100 * t.at("ARTOVeQ", "S2"), 100 * t.at("ARTOVeQ", "S3"));
  return o;
}

// --- 6 -------------------------------------------------------------------

Outcome budget_granularity() {
  const std::size_t M = 4, L = 8;
  std::vector<float> values(2 << L);
  std::mt19937_64 rng(6);
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (auto& v : values) v = g(rng);
  NestedCodebook<float> cb(2, L, values);
  std::vector<float> feats(M * 2);
  for (auto& v : feats) v = g(rng);
  FeatureBlock<float> block(feats, 2);

  std::set<std::size_t> budgets;
  bool exact = true;
  std::vector<std::size_t> lv(M);
  std::size_t combos = 0;
  for (std::size_t a = 1; a <= L; ++a)
    for (std::size_t b = 1; b <= L; ++b)
      for (std::size_t c = 1; c <= L; ++c)
        for (std::size_t d = 1; d <= L; ++d) {
          lv = {a, b, c, d};
          const auto r = quantize_block(block, cb, std::span<const std::size_t>(lv));
          exact = exact && r.bits_used == a + b + c + d;
          for (std::size_t m = 0; m < M; ++m)
            exact = exact && r.indices[m] >= 0 && r.indices[m] < (1 << lv[m]);
          budgets.insert(r.bits_used);
          ++combos;
        }
  bool generator = true;
  for (std::size_t B = M; B <= M * L; ++B) {
    const auto alloc = mixed_allocation(B, M, L);
    const auto r = quantize_block(block, cb, std::span<const std::size_t>(alloc));
    generator = generator && r.bits_used == B;
  }
  std::set<std::size_t> want;
  for (std::size_t B = M; B <= M * L; ++B) want.insert(B);
  Outcome o;
  o.pass = budgets == want && exact && generator;
  o.detail = fmt("%zu allocations reach %zu budgets in [%zu, %zu]; accounting %s; allocation generator %s",
                 combos, budgets.size(), *budgets.begin(), *budgets.rbegin(),
                 exact ? "exact" : "WRONG", generator ? "covers every budget" : "GAPS");
  return o;
}

// --- 7 -------------------------------------------------------------------

Outcome scenario_distribution() {
  Outcome o;
  std::string parts;
  for (double k : {-0.25, 0.0, 0.25}) {
    ScenarioSpec spec;
    spec.k = k;
    const auto p = spec.probabilities();
    std::mt19937_64 rng(7 + static_cast<std::uint64_t>(std::lround(100 * (k + 1))));
    std::vector<double> freq(8, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) freq[draw_budget(spec, rng) - 1] += 1.0 / n;
    double tv = 0.0;
    for (std::size_t b = 0; b < 8; ++b) tv += 0.5 * std::abs(freq[b] - p[b]);
    bool ok = tv <= 0.01;
    if (k == 0.0)
      for (double q : p) ok = ok && std::abs(q - 0.125) <= 1e-12;
    o.pass = o.pass && ok;
    parts += fmt("k=%+.2f TV %.4f; ", k, tv);
  }
  o.detail = parts + "(tol 0.01)";
  return o;
}

// --- 8 -------------------------------------------------------------------

Outcome level_selection_grid() {
  std::size_t cases = 0, infeasible = 0, bad = 0;
  for (auto rule : {LatencyRule::eq4, LatencyRule::consistent}) {
    for (int c = 10; c <= 1000; ++c) {
      for (int t = 1; t <= 100; ++t) {
        const double tau = t / 1000.0;
        ++cases;
        try {
          const auto l = select_level(c, 4, tau, 8, rule);
          const bool fits = latency(l, 4, c, rule) <= tau;
          const bool maximal = l == 8 || latency(l + 1, 4, c, rule) > tau;
          if (!fits || !maximal || l < 1) ++bad;
        } catch (const InfeasibleLevel&) {
          ++infeasible;
          if (latency(1, 4, c, rule) <= tau) ++bad;
        }
      }
    }
  }
  Outcome o;
  o.pass = bad == 0;
  o.detail = fmt("%zu (C, tau, rule) cases, %zu infeasible, %zu violations", cases, infeasible, bad);
  return o;
}

// --- 10 ------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + ARTOVEQ_CLI_PATH + "\" " + args + " >> \"" +
                          log.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

Outcome cli_determinism(const fs::path& work) {
  fs::remove_all(work);
  const auto a = work / "first", b = work / "second";
  fs::create_directories(a);
  fs::create_directories(b);
  const auto log = work / "cli.log";
  const std::string cfg = std::string(ARTOVEQ_CONFIG_DIR) + "/quick.cfg";

  int status = 0;
  const std::vector<std::string> commands{"train", "train-progressive", "sweep --baselines", "channel-sim"};
  for (const auto& c : commands) status |= run_cli("--config \"" + cfg + "\" --out \"" + a.string() + "\" " + c, log);
  // Second run driven only by the configuration the first run emitted.
  const auto emitted = a / "config.txt";
  for (const auto& c : commands)
    status |= run_cli("--config \"" + emitted.string() + "\" --out \"" + b.string() + "\" " + c, log);

  std::size_t compared = 0, differing = 0;
  std::string which;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename().string();
    if (name == "epoch_log.txt") continue;  // carries wall-clock times
    ++compared;
    const auto other = b / name;
    if (!fs::exists(other) || io::read_file(entry.path()) != io::read_file(other)) {
      ++differing;
      which += " " + name;
    }
  }
  const bool has_seed = io::read_file(a / "sweep.csv").find("# seed = ") != std::string::npos;
  Outcome o;
  o.pass = status == 0 && differing == 0 && compared >= 8 && has_seed;
  o.detail = fmt("%zu result files compared, %zu differ%s; exit status %d; config embedded %s",
                 compared, differing, which.c_str(), status, has_seed ? "yes" : "NO");
  return o;
}

}  // namespace

int main() {
  const auto start = std::chrono::steady_clock::now();
  auto guarded = [](int id, const char* title, auto fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    report(id, title, o);
  };

  guarded(1, "gradient fidelity", gradient_fidelity);
  guarded(2, "LBG oracle equivalence", lbg_oracle);
  guarded(3, "nesting and Minkowski structure", nesting_and_minkowski);

  SyntheticRun synth;
  bool synth_ok = true;
  std::string synth_error;
  try {
    synth = synthetic_experiment(fs::path(ARTOVEQ_CONFIG_DIR) / "synthetic.cfg");
  } catch (const std::exception& e) {
    synth_ok = false;
    synth_error = e.what();
  }
  auto synthetic = [&](auto fn) {
    return [&, fn] {
      if (!synth_ok) throw std::runtime_error(synth_error);
      return fn(synth);
    };
  };
  guarded(4, "rate-accuracy trend", synthetic(rate_trend));
  guarded(5, "single-codebook gap", synthetic(single_codebook_gap));
  guarded(6, "mixed-resolution granularity", budget_granularity);
  guarded(7, "scenario distribution", scenario_distribution);
  guarded(8, "latency-bound level selection", level_selection_grid);
  guarded(9, "dynamic-channel ordering", synthetic(dynamic_ordering));
  guarded(10, "CLI determinism", [] { return cli_determinism(fs::path(ARTOVEQ_WORK_DIR)); });

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%d of 10 criteria failed (%.0f s; synthetic pipeline %.0f s)\n", failures, secs, synth.seconds);
  return failures;
}
