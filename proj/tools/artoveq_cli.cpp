#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "artoveq/harness.hpp"
#include "artoveq/io.hpp"

namespace fs = std::filesystem;
using namespace artoveq;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string from;  // artifact directory for inputs; defaults to out
};

class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ExperimentConfig load_config(const Globals& g) {
  auto cfg = g.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.finalize();
  return cfg;
}

fs::path out_path(const Globals& g, const std::string& name) {
  return fs::path(g.out) / name;
}

fs::path input_path(const Globals& g, const std::string& name) {
  return fs::path(g.from.empty() ? g.out : g.from) / name;
}

fs::path require(const fs::path& p, const char* what) {
  if (!fs::exists(p)) {
    throw MissingArtifact(std::string(what) + " not found: " + p.string());
  }
  return p;
}

// Epoch log file plus one progress line per stage change on stderr.
class LogSink {
 public:
  explicit LogSink(const fs::path& path) {
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    file_.open(path, std::ios::trunc);
  }
  EpochLogger logger() {
    return [this](const EpochRecord& r) {
      file_ << format_epoch_record(r) << "\n";
      file_.flush();
      const std::string key = r.stage + "/" + std::to_string(r.level);
      if (key != last_) {
        std::cerr << "  " << r.stage;
        if (r.level) std::cerr << " level " << r.level;
        std::cerr << "\n";
        last_ = key;
      }
    };
  }

 private:
  std::ofstream file_;
  std::string last_;
};

void write_config(const Globals& g, const ExperimentConfig& cfg) {
  io::write_file(out_path(g, "config.txt"), cfg.to_text());
}

std::vector<float> read_points(const fs::path& path, std::size_t& dim) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("point file not found: " + path.string());
  std::vector<float> out;
  dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    for (auto& c : line) {
      if (c == ',') c = ' ';
    }
    std::istringstream ss(line);
    std::vector<float> row;
    float v;
    while (ss >> v) row.push_back(v);
    if (!ss.eof()) {
      throw std::invalid_argument("point file line " + std::to_string(lineno) +
                                  ": non-numeric value");
    }
    if (row.empty()) continue;
    if (dim == 0) dim = row.size();
    if (row.size() != dim) {
      throw std::invalid_argument("point file line " + std::to_string(lineno) +
                                  ": expected " + std::to_string(dim) + " values");
    }
    out.insert(out.end(), row.begin(), row.end());
  }
  if (out.empty()) throw std::invalid_argument("point file holds no points");
  return out;
}

int cmd_lbg(const Globals& g, const std::string& points, std::size_t size) {
  auto cfg = load_config(g);
  std::size_t dim = 0;
  const auto pts = read_points(points, dim);
  LbgConfig lc = cfg.plan.lbg;
  lc.target_size = size ? size : lc.target_size;
  lc.validate();
  const auto fit = lbg_fit<float>(pts, dim, lc);
  write_config(g, cfg);
  const NestedCodebook<float> cb(dim, log2_exact(lc.target_size), fit.codewords);
  io::save(out_path(g, "codebook.json"), cb);
  std::string hist = "codebook_size,iteration,distortion\n";
  for (const auto& st : fit.history) {
    for (std::size_t i = 0; i < st.distortion.size(); ++i) {
      hist += std::to_string(st.codebook_size) + "," + std::to_string(i + 1) + "," +
              format_real(st.distortion[i]) + "\n";
    }
  }
  io::write_file(out_path(g, "lbg_history.csv"), hist);
  std::printf("fitted %zu codewords to %zu points; mean squared distortion %s\n",
              lc.target_size, pts.size() / dim,
              format_real(fit.mean_squared_distortion).c_str());
  return 0;
}

// Warm start shared by every pipeline; taken from --from when it holds one.
TaskModel<float> warm_model(const Globals& g, const ExperimentConfig& cfg,
                            const SplitDataset& data, LogSink& sink) {
  const auto p = input_path(g, "warm.json");
  if (!g.from.empty() && fs::exists(p)) {
    auto m = io::load_model(p);
    if (out_path(g, "warm.json") != p) io::save(out_path(g, "warm.json"), m);
    return m;
  }
  std::cerr << "warm start\n";
  TaskModel<float> warm(cfg.network, cfg.seed);
  stage1_warmstart(warm, data.train, cfg.plan, sink.logger());
  io::save(out_path(g, "warm.json"), warm);
  return warm;
}

struct Trained {
  TaskModel<float> model;
  NestedCodebook<float> codebook;
};

Trained train_nested(const Globals& g, const ExperimentConfig& cfg,
                     const SplitDataset& data, LogSink& sink, bool mixed) {
  const auto warm = warm_model(g, cfg, data, sink);
  std::cerr << (mixed ? "mixed-resolution training\n" : "variable-rate training\n");
  Trained t{warm, NestedCodebook<float>(cfg.network.segment_dim, cfg.plan.max_level)};
  const auto lbg = stage2_codebook_init(t.model, data.train, cfg.plan.lbg);
  if (mixed) {
    stage3_mixed_resolution<float>(t.model, t.codebook, lbg.codewords, data.train,
                                   cfg.plan, sink.logger());
  } else {
    stage3_joint_adaptation<float>(t.model, t.codebook, lbg.codewords, data.train,
                                   cfg.plan, sink.logger());
  }
  const std::string prefix = mixed ? "mixed_" : "";
  io::save(out_path(g, prefix + "model.json"), t.model);
  io::save(out_path(g, prefix + "codebook.json"), t.codebook);
  return t;
}

ProgressiveRun<float> train_prog(const Globals& g, const ExperimentConfig& cfg,
                                 const SplitDataset& data, LogSink& sink) {
  auto warm = warm_model(g, cfg, data, sink);
  std::cerr << "progressive training\n";
  auto cb = adapt_progressive(warm, data.train, cfg.plan, sink.logger());
  io::save(out_path(g, "progressive_model.json"), warm);
  io::save(out_path(g, "progressive_codebook.json"), cb);
  return {std::move(warm), std::move(cb)};
}

void report_levels(const ExperimentConfig& cfg, const TaskModel<float>& model,
                   const NestedCodebook<float>& cb, const Dataset& test) {
  const auto tables = LevelTables<float>::nested(cb);
  for (std::size_t l = 1; l <= cb.max_level(); ++l) {
    const auto lv = uniform_levels(cfg.network.segments, l);
    std::printf("level %zu: accuracy %s\n", l,
                format_real(evaluate<float>(model, tables, lv, test).accuracy).c_str());
  }
}

int cmd_train(const Globals& g, bool mixed) {
  auto cfg = load_config(g);
  const auto data = load_data(cfg);
  write_config(g, cfg);
  LogSink sink(out_path(g, "epoch_log.txt"));
  const auto t = train_nested(g, cfg, data, sink, mixed);
  report_levels(cfg, t.model, t.codebook, data.test);
  return 0;
}

int cmd_train_progressive(const Globals& g) {
  auto cfg = load_config(g);
  const auto data = load_data(cfg);
  write_config(g, cfg);
  LogSink sink(out_path(g, "epoch_log.txt"));
  const auto run = train_prog(g, cfg, data, sink);
  for (std::size_t l = 1; l <= run.codebook.max_level(); ++l) {
    std::printf("level %zu: accuracy %s\n", l,
                format_real(evaluate_progressive_incremental(run.model, run.codebook,
                                                             l, data.test)
                                .accuracy)
                    .c_str());
  }
  return 0;
}

int cmd_sweep(const Globals& g, bool baselines) {
  auto cfg = load_config(g);
  const auto model = io::load_model(require(input_path(g, "model.json"), "model"));
  const auto cb = io::load_nested(require(input_path(g, "codebook.json"), "codebook"));
  std::optional<TaskModel<float>> warm;
  if (baselines) warm = io::load_model(require(input_path(g, "warm.json"), "warm-start model"));
  const auto data = load_data(cfg);
  write_config(g, cfg);
  const auto result = run_rate_sweep(cfg, model, cb, warm ? &*warm : nullptr, data);
  io::write_file(out_path(g, "sweep.csv"), result.to_csv(cfg));
  for (const auto& r : result.rows) {
    std::printf("%-10s bits %2zu accuracy %s\n", r.scheme.c_str(), r.bits,
                format_real(r.accuracy).c_str());
  }
  return 0;
}

int cmd_mixed_sweep(const Globals& g) {
  auto cfg = load_config(g);
  const auto model =
      io::load_model(require(input_path(g, "mixed_model.json"), "mixed model"));
  const auto cb =
      io::load_nested(require(input_path(g, "mixed_codebook.json"), "mixed codebook"));
  const auto data = load_data(cfg);
  write_config(g, cfg);
  const auto result = run_mixed_vs_identical(cfg, model, cb, data.test);
  io::write_file(out_path(g, "mixed_sweep.csv"), result.to_csv(cfg));
  for (const auto& r : result.rows) {
    std::printf("%-9s %-16s bits %2zu accuracy %s\n", r.scheme.c_str(),
                format_allocation(r.allocation).c_str(), r.bits,
                format_real(r.accuracy).c_str());
  }
  return 0;
}

// Uses trained artifacts from the input directory when present and trains the
// missing ones.
int cmd_channel_sim(const Globals& g) {
  auto cfg = load_config(g);
  const auto data = load_data(cfg);
  write_config(g, cfg);
  LogSink sink(out_path(g, "epoch_log.txt"));

  std::optional<Trained> art;
  if (fs::exists(input_path(g, "model.json")) && fs::exists(input_path(g, "codebook.json"))) {
    art = Trained{io::load_model(input_path(g, "model.json")),
                  io::load_nested(input_path(g, "codebook.json"))};
  } else {
    art = train_nested(g, cfg, data, sink, false);
  }
  std::optional<ProgressiveRun<float>> prog;
  if (fs::exists(input_path(g, "progressive_model.json")) &&
      fs::exists(input_path(g, "progressive_codebook.json"))) {
    prog = ProgressiveRun<float>{io::load_model(input_path(g, "progressive_model.json")),
                                 io::load_progressive(input_path(g, "progressive_codebook.json"))};
  } else {
    prog = train_prog(g, cfg, data, sink);
  }
  const auto warm = warm_model(g, cfg, data, sink);
  std::cerr << "fixed-rate baselines\n";
  const auto fixed = train_fixed_rate_models(cfg, warm, data.train, sink.logger());

  DynamicInputs in{&art->model, &art->codebook, &prog->model, &prog->codebook, &fixed};
  const auto table = run_dynamic_table(cfg, in, data.test);
  io::write_file(out_path(g, "dynamic_table.txt"), table.to_text(cfg));
  io::write_file(out_path(g, "dynamic_table.csv"), table.to_csv(cfg));
  io::write_file(out_path(g, "trace.csv"), table.trace_csv());
  std::cout << table.to_text(cfg);
  return 0;
}

int cmd_eval(const Globals& g, const std::string& model_file, const std::string& cb_file,
             std::size_t level, const std::string& allocation) {
  auto cfg = load_config(g);
  const auto model = io::load_model(
      require(model_file.empty() ? input_path(g, "model.json") : fs::path(model_file), "model"));
  const fs::path cbp = require(
      cb_file.empty() ? input_path(g, "codebook.json") : fs::path(cb_file), "codebook");
  const auto text = io::read_file(cbp);
  const auto data = load_data(cfg);
  const std::size_t M = model.spec().segments;

  std::vector<std::size_t> levels;
  if (!allocation.empty()) {
    std::string s = allocation;
    for (auto& c : s) {
      if (c == '-' || c == ',') c = ' ';
    }
    std::istringstream ss(s);
    std::size_t v;
    while (ss >> v) levels.push_back(v);
    if (levels.size() != M) {
      throw std::invalid_argument("allocation must list " + std::to_string(M) + " levels");
    }
  }

  SweepResult result;
  if (io::codebook_mode(text) == "progressive") {
    const auto cb = io::progressive_from_text(text);
    if (!levels.empty()) throw std::invalid_argument("progressive codebooks take --level only");
    for (std::size_t l = 1; l <= cb.max_level(); ++l) {
      if (level && l != level) continue;
      result.add("progressive", cfg, uniform_levels(M, l),
                 evaluate_progressive_incremental(model, cb, l, data.test));
    }
  } else {
    const auto cb = io::nested_from_text(text);
    const auto tables = LevelTables<float>::nested(cb);
    if (!levels.empty()) {
      result.add("artoveq", cfg, levels, evaluate<float>(model, tables, levels, data.test));
    } else {
      for (std::size_t l = 1; l <= cb.max_level(); ++l) {
        if (level && l != level) continue;
        const auto lv = uniform_levels(M, l);
        result.add("artoveq", cfg, lv, evaluate<float>(model, tables, lv, data.test));
      }
    }
  }
  if (result.rows.empty()) throw std::invalid_argument("level outside the codebook");
  write_config(g, cfg);
  io::write_file(out_path(g, "eval.csv"), result.to_csv(cfg));
  for (const auto& r : result.rows) {
    std::printf("%s bits %zu accuracy %s loss %s\n", format_allocation(r.allocation).c_str(),
                r.bits, format_real(r.accuracy).c_str(), format_real(r.loss).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive-rate task-based vector quantization experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "Configuration file (key = value lines)")
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Override the experiment seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--from", g.from, "Directory holding trained artifacts (default: --out)");

  std::string points;
  std::size_t size = 0;
  auto* lbg = app.add_subcommand("lbg", "Fit an LBG codebook to a point file");
  lbg->add_option("--points", points, "Text file, one point per line")->required();
  lbg->add_option("--size", size, "Codebook size (power of two; default 2^max_level)");

  auto* train = app.add_subcommand("train", "Variable-rate training (single nested codebook)");
  auto* train_mixed = app.add_subcommand("train-mixed", "Mixed-resolution training");
  auto* train_prog = app.add_subcommand("train-progressive",
                                        "Successive-refinement (progressive) training");
  bool baselines = false;
  auto* sweep = app.add_subcommand("sweep", "Accuracy at every level of a trained codebook");
  sweep->add_flag("--baselines", baselines,
                  "Also train the fixed-rate and single-rate LBG baselines");
  auto* mixed_sweep =
      app.add_subcommand("mixed-sweep", "Mixed versus identical allocations per budget");
  auto* channel = app.add_subcommand("channel-sim", "Dynamic-channel comparison table");

  std::string model_file, cb_file, allocation;
  std::size_t level = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a model and codebook");
  eval->add_option("--model", model_file, "Checkpoint (default: <from>/model.json)");
  eval->add_option("--codebook", cb_file, "Codebook (default: <from>/codebook.json)");
  eval->add_option("--level", level, "Single level to evaluate (default: all)");
  eval->add_option("--allocation", allocation, "Per-segment levels, e.g. 4-3-2-1");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\nerror: " << e.what() << "\n";
    return 2;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*lbg) return cmd_lbg(g, points, size);
    if (*train) return cmd_train(g, false);
    if (*train_mixed) return cmd_train(g, true);
    if (*train_prog) return cmd_train_progressive(g);
    if (*sweep) return cmd_sweep(g, baselines);
    if (*mixed_sweep) return cmd_mixed_sweep(g);
    if (*channel) return cmd_channel_sim(g);
    if (*eval) return cmd_eval(g, model_file, cb_file, level, allocation);
  } catch (const MissingArtifact& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
