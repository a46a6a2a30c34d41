#include "artoveq/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "artoveq/io.hpp"
#include "artoveq/kernels.hpp"

namespace artoveq {

void SyntheticTaskSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("synthetic: need at least 2 classes");
  if (input_dim == 0) throw std::invalid_argument("synthetic: input_dim must be > 0");
  if (train_samples == 0 || test_samples == 0) {
    throw std::invalid_argument("synthetic: sample counts must be positive");
  }
  if (layout != "random" && layout != "line") {
    throw std::invalid_argument("synthetic: layout must be random or line");
  }
  if (!(separation > 0.0) || !(noise >= 0.0)) {
    throw std::invalid_argument("synthetic: separation must be > 0, noise >= 0");
  }
}

SplitDataset make_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  std::seed_seq seq{spec.seed, std::uint64_t{0xda7a}};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);

  SplitDataset out{Dataset(spec.input_dim, spec.classes),
                   Dataset(spec.input_dim, spec.classes), {}};
  if (spec.layout == "random") {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      std::vector<float> mean(spec.input_dim);
      for (auto& v : mean) v = static_cast<float>(spec.separation * normal(rng));
      out.class_means.push_back(std::move(mean));
    }
  } else {
    std::vector<double> dir(spec.input_dim);
    double norm = 0.0;
    for (auto& v : dir) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    const double centre = 0.5 * static_cast<double>(spec.classes - 1);
    for (std::size_t c = 0; c < spec.classes; ++c) {
      std::vector<float> mean(spec.input_dim);
      const double t = (static_cast<double>(c) - centre) * spec.separation / norm;
      for (std::size_t j = 0; j < spec.input_dim; ++j) {
        mean[j] = static_cast<float>(t * dir[j]);
      }
      out.class_means.push_back(std::move(mean));
    }
  }
  for (std::size_t a = 0; a < spec.classes; ++a) {
    for (std::size_t b = a + 1; b < spec.classes; ++b) {
      if (out.class_means[a] == out.class_means[b]) {
        throw std::logic_error("synthetic: duplicate class means");
      }
    }
  }
  std::vector<float> x(spec.input_dim);
  const auto fill = [&](Dataset& d, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t label = i % spec.classes;
      for (std::size_t j = 0; j < spec.input_dim; ++j) {
        x[j] = static_cast<float>(out.class_means[label][j] +
                                  spec.noise * normal(rng));
      }
      d.add(x, static_cast<std::int32_t>(label));
    }
  };
  fill(out.train, spec.train_samples);
  fill(out.test, spec.test_samples);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes,
                        std::size_t offset, const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw IdxError(path.string() + ": truncated header at byte offset " +
                   std::to_string(bytes.size()) + " (need " +
                   std::to_string(offset + 4) + " bytes)");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

Dataset load_idx_images(const std::filesystem::path& images,
                        const std::filesystem::path& labels,
                        std::size_t classes) {
  const auto img = read_bytes(images);
  const auto lab = read_bytes(labels);

  const auto img_magic = read_be32(img, 0, images);
  if (img_magic != 0x00000803u) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x at byte offset 0", img_magic);
    throw IdxError(images.string() + ": " + buf + " (expected 0x00000803)");
  }
  const std::size_t n = read_be32(img, 4, images);
  const std::size_t rows = read_be32(img, 8, images);
  const std::size_t cols = read_be32(img, 12, images);
  const std::size_t pixels = rows * cols;
  if (pixels == 0) throw IdxError(images.string() + ": zero-sized images");
  if (img.size() < 16 + n * pixels) {
    throw IdxError(images.string() + ": truncated at byte offset " +
                   std::to_string(img.size()) + ", expected " +
                   std::to_string(16 + n * pixels) + " bytes");
  }

  const auto lab_magic = read_be32(lab, 0, labels);
  if (lab_magic != 0x00000801u) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "bad magic 0x%08x at byte offset 0", lab_magic);
    throw IdxError(labels.string() + ": " + buf + " (expected 0x00000801)");
  }
  const std::size_t n_labels = read_be32(lab, 4, labels);
  if (n_labels != n) {
    throw IdxError("image/label count mismatch: " + std::to_string(n) +
                   " images, " + std::to_string(n_labels) + " labels");
  }
  if (lab.size() < 8 + n) {
    throw IdxError(labels.string() + ": truncated at byte offset " +
                   std::to_string(lab.size()) + ", expected " +
                   std::to_string(8 + n) + " bytes");
  }
  if (classes == 0) {
    classes = n ? static_cast<std::size_t>(*std::max_element(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(n))) + 1 : 1;
  }
  Dataset out(pixels, classes);
  std::vector<float> x(pixels);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* p = img.data() + 16 + i * pixels;
    for (std::size_t j = 0; j < pixels; ++j) x[j] = static_cast<float>(p[j]) / 255.0f;
    out.add(x, static_cast<std::int32_t>(lab[8 + i]));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> mixed_allocation(std::size_t budget,
                                          std::size_t segments,
                                          std::size_t max_level) {
  if (segments == 0 || max_level == 0) {
    throw std::invalid_argument("mixed allocation: segments and levels must be > 0");
  }
  if (budget < segments || budget > segments * max_level) {
    throw std::out_of_range("mixed allocation: budget " + std::to_string(budget) +
                            " outside [" + std::to_string(segments) + ", " +
                            std::to_string(segments * max_level) + "]");
  }
  std::vector<std::size_t> a(segments, 1);
  std::size_t total = segments;
  while (total < budget) {
    bool grown = false;
    for (std::size_t m = 0; m < segments && !grown; ++m) {
      const std::size_t v = a[m] + 1;
      if (v > max_level) continue;
      if (m > 0 && a[m - 1] < v) continue;
      if (m + 1 < segments && v - a[m + 1] > 1) continue;
      a[m] = v;
      grown = true;
    }
    if (!grown) throw std::logic_error("mixed allocation: no segment can grow");
    ++total;
  }
  return a;
}

// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw std::invalid_argument("config: " + key +
                                " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: " + key + " expects true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(v)) out.push_back(to_u64(key, s));
  return out;
}

template <typename C>
std::string join(const C& items) {
  std::string out;
  for (const auto& i : items) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_same_v<std::decay_t<decltype(i)>, std::string>) {
      out += i;
    } else {
      out += std::to_string(i);
    }
  }
  return out;
}

struct Key {
  const char* name;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define SIZE_KEY(NAME, FIELD)                                                   \
  Key {                                                                         \
    NAME, [](const ExperimentConfig& c) { return std::to_string(c.FIELD); },    \
        [](ExperimentConfig& c, const std::string& v) {                         \
          c.FIELD = static_cast<decltype(c.FIELD)>(to_u64(NAME, v));            \
        }                                                                       \
  }
#define REAL_KEY(NAME, FIELD)                                                   \
  Key {                                                                         \
    NAME, [](const ExperimentConfig& c) { return fmt_double(c.FIELD); },        \
        [](ExperimentConfig& c, const std::string& v) {                         \
          c.FIELD = to_double(NAME, v);                                         \
        }                                                                       \
  }
#define STRING_KEY(NAME, FIELD)                                                 \
  Key {                                                                         \
    NAME, [](const ExperimentConfig& c) { return c.FIELD; },                    \
        [](ExperimentConfig& c, const std::string& v) { c.FIELD = v; }          \
  }
#define BOOL_KEY(NAME, FIELD)                                                   \
  Key {                                                                         \
    NAME,                                                                       \
        [](const ExperimentConfig& c) {                                         \
          return std::string(c.FIELD ? "true" : "false");                       \
        },                                                                      \
        [](ExperimentConfig& c, const std::string& v) {                         \
          c.FIELD = to_bool(NAME, v);                                           \
        }                                                                       \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = {
      SIZE_KEY("seed", seed),
      STRING_KEY("dataset", dataset),
      SIZE_KEY("data_seed", synthetic.seed),
      SIZE_KEY("classes", synthetic.classes),
      SIZE_KEY("input_dim", synthetic.input_dim),
      STRING_KEY("layout", synthetic.layout),
      REAL_KEY("separation", synthetic.separation),
      REAL_KEY("noise", synthetic.noise),
      SIZE_KEY("train_samples", synthetic.train_samples),
      SIZE_KEY("test_samples", synthetic.test_samples),
      STRING_KEY("idx_train_images", idx_train_images),
      STRING_KEY("idx_train_labels", idx_train_labels),
      STRING_KEY("idx_test_images", idx_test_images),
      STRING_KEY("idx_test_labels", idx_test_labels),
      SIZE_KEY("d", network.segment_dim),
      SIZE_KEY("M", network.segments),
      Key{"encoder_hidden",
          [](const ExperimentConfig& c) { return join(c.network.encoder_hidden); },
          [](ExperimentConfig& c, const std::string& v) {
            c.network.encoder_hidden = to_sizes("encoder_hidden", v);
          }},
      Key{"decoder_hidden",
          [](const ExperimentConfig& c) { return join(c.network.decoder_hidden); },
          [](ExperimentConfig& c, const std::string& v) {
            c.network.decoder_hidden = to_sizes("decoder_hidden", v);
          }},
      Key{"activation",
          [](const ExperimentConfig& c) {
            return std::string(grad::to_string(c.network.activation));
          },
          [](ExperimentConfig& c, const std::string& v) {
            c.network.activation = grad::parse_activation(v);
          }},
      SIZE_KEY("max_level", plan.max_level),
      SIZE_KEY("stage1_epochs", plan.stage1_epochs),
      SIZE_KEY("epochs_per_level", plan.epochs_per_level),
      SIZE_KEY("batch_size", plan.batch_size),
      REAL_KEY("learning_rate", plan.learning_rate),
      REAL_KEY("momentum", plan.momentum),
      REAL_KEY("beta", beta),
      REAL_KEY("eta", eta),
      Key{"mixed_order",
          [](const ExperimentConfig& c) {
            return std::string(to_string(c.plan.mixed_order));
          },
          [](ExperimentConfig& c, const std::string& v) {
            c.plan.mixed_order = parse_mixed_order(v);
          }},
      BOOL_KEY("progressive_freeze_earlier", plan.progressive_freeze_earlier),
      BOOL_KEY("proximal_drift", plan.proximal_drift),
      SIZE_KEY("fixed_rate_epochs", plan.fixed_rate_epochs),
      REAL_KEY("lbg_finetune_fraction", plan.lbg_finetune_fraction),
      REAL_KEY("lbg_perturbation", plan.lbg.split_perturbation),
      SIZE_KEY("lbg_max_iterations", plan.lbg.max_iterations),
      REAL_KEY("lbg_threshold", plan.lbg.convergence_threshold),
      Key{"scenarios", [](const ExperimentConfig& c) { return join(c.scenarios); },
          [](ExperimentConfig& c, const std::string& v) { c.scenarios = split_list(v); }},
      Key{"k",
          [](const ExperimentConfig& c) {
            return c.k ? fmt_double(*c.k) : std::string("none");
          },
          [](ExperimentConfig& c, const std::string& v) {
            if (v == "none") {
              c.k.reset();
            } else {
              c.k = to_double("k", v);
            }
          }},
      SIZE_KEY("steps", steps),
      REAL_KEY("tau_max", tau_max),
      REAL_KEY("capacity_scale", capacity_scale),
      REAL_KEY("coherence", coherence),
      Key{"latency-rule",
          [](const ExperimentConfig& c) {
            return std::string(to_string(c.latency_rule));
          },
          [](ExperimentConfig& c, const std::string& v) {
            c.latency_rule = parse_latency_rule(v);
          }},
      Key{"single_rates", [](const ExperimentConfig& c) { return join(c.single_rates); },
          [](ExperimentConfig& c, const std::string& v) {
            c.single_rates = to_sizes("single_rates", v);
          }},
  };
  return keys;
}

#undef SIZE_KEY
#undef REAL_KEY
#undef STRING_KEY
#undef BOOL_KEY

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& k : key_table()) {
    if (key == k.name) {
      k.set(*this, value);
      return;
    }
  }
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::vector<std::string> ExperimentConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.emplace_back(k.name);
  return out;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " +
                                  e.what());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  return parse(io::read_file(path));
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& k : key_table()) {
    out += k.name;
    out += " = ";
    out += k.get(*this);
    out += "\n";
  }
  return out;
}

void ExperimentConfig::finalize() {
  plan.seed = seed;
  plan.loss = LossConfig::defaults(plan.max_level, beta, eta);
  plan.lbg.target_size = std::size_t{1} << plan.max_level;
  if (dataset == "synthetic") {
    synthetic.validate();
    network.input_dim = synthetic.input_dim;
    network.classes = synthetic.classes;
  } else if (dataset != "idx") {
    throw std::invalid_argument("config: dataset must be synthetic or idx");
  }
  network.validate();
  plan.validate();
  plan.lbg.validate();
  if (!k) {
    for (const auto& s : scenarios) (void)scenario(s, network.segments);
  }
  for (auto r : single_rates) {
    if (r < 1 || r > plan.max_level) {
      throw std::invalid_argument("config: single rate " + std::to_string(r) +
                                  " outside [1, max_level]");
    }
  }
  SessionConfig sc;
  sc.steps = steps;
  sc.tau_max = tau_max;
  sc.capacity_scale = capacity_scale;
  sc.coherence = coherence;
  sc.validate();
}

SplitDataset load_data(const ExperimentConfig& cfg) {
  if (cfg.dataset == "synthetic") return make_synthetic(cfg.synthetic);
  SplitDataset out{load_idx_images(cfg.idx_train_images, cfg.idx_train_labels,
                                   cfg.network.classes),
                   load_idx_images(cfg.idx_test_images, cfg.idx_test_labels,
                                   cfg.network.classes),
                   {}};
  if (out.train.input_dim() != cfg.network.input_dim) {
    throw std::invalid_argument("idx data has " + std::to_string(out.train.input_dim()) +
                                " inputs but input_dim is " +
                                std::to_string(cfg.network.input_dim));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string format_real(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

std::string format_allocation(const std::vector<std::size_t>& allocation) {
  std::string out;
  for (auto a : allocation) {
    if (!out.empty()) out += "-";
    out += std::to_string(a);
  }
  return out;
}

void SweepResult::add(std::string scheme, const ExperimentConfig& cfg,
                      std::vector<std::size_t> allocation, const EvalResult& eval) {
  SweepRow row;
  row.scheme = std::move(scheme);
  row.d = cfg.network.segment_dim;
  row.segments = cfg.network.segments;
  row.bits = std::accumulate(allocation.begin(), allocation.end(), std::size_t{0});
  row.allocation = std::move(allocation);
  row.accuracy = eval.accuracy;
  row.loss = eval.mean_loss;
  row.seed = cfg.seed;
  rows.push_back(std::move(row));
}

namespace {

std::string config_comment(const ExperimentConfig& cfg) {
  std::string out;
  std::istringstream in(cfg.to_text());
  std::string line;
  while (std::getline(in, line)) out += "# " + line + "\n";
  return out;
}

}  // namespace

std::string SweepResult::to_csv(const ExperimentConfig& cfg) const {
  std::string out = config_comment(cfg);
  out += "scheme,d,M,allocation,bits,accuracy,loss,seed\n";
  for (const auto& r : rows) {
    out += r.scheme + "," + std::to_string(r.d) + "," + std::to_string(r.segments) +
           "," + format_allocation(r.allocation) + "," + std::to_string(r.bits) + "," +
           format_real(r.accuracy) + "," + format_real(r.loss) + "," +
           std::to_string(r.seed) + "\n";
  }
  return out;
}

SweepResult run_rate_sweep(const ExperimentConfig& cfg,
                           const TaskModel<float>& model,
                           const NestedCodebook<float>& codebook,
                           const TaskModel<float>* warm,
                           const SplitDataset& data) {
  const std::size_t M = cfg.network.segments;
  SweepResult out;
  const auto tables = LevelTables<float>::nested(codebook);
  for (std::size_t l = 1; l <= codebook.max_level(); ++l) {
    const auto levels = uniform_levels(M, l);
    out.add("artoveq", cfg, levels, evaluate<float>(model, tables, levels, data.test));
  }
  if (!warm) return out;
  for (const auto& f : train_fixed_rate_models(cfg, *warm, data.train)) {
    const auto levels = uniform_levels(M, f.rate);
    out.add("fixed_rate", cfg, levels,
            evaluate<float>(f.model, LevelTables<float>::nested(f.codebook), levels,
                            data.test));
  }
  for (std::size_t r = 1; r <= cfg.plan.max_level; ++r) {
    const auto run = train_lbg_baseline<float>(*warm, data.train, cfg.plan, r);
    const auto levels = uniform_levels(M, r);
    out.add("lbg", cfg, levels,
            evaluate<float>(run.model, LevelTables<float>::nested(run.codebook), levels,
                            data.test));
  }
  return out;
}

SweepResult run_mixed_vs_identical(const ExperimentConfig& cfg,
                                   const TaskModel<float>& model,
                                   const NestedCodebook<float>& codebook,
                                   const Dataset& test) {
  const std::size_t M = cfg.network.segments;
  const std::size_t L = codebook.max_level();
  const auto tables = LevelTables<float>::nested(codebook);
  SweepResult out;
  for (std::size_t B = M; B <= M * L; ++B) {
    const auto mixed = mixed_allocation(B, M, L);
    out.add("mixed", cfg, mixed, evaluate<float>(model, tables, mixed, test));
    if (B % M == 0) {
      const auto same = uniform_levels(M, B / M);
      out.add("identical", cfg, same, evaluate<float>(model, tables, same, test));
    }
  }
  return out;
}

EvalResult evaluate_progressive_incremental(const TaskModel<float>& model,
                                            const ProgressiveCodebook<float>& codebook,
                                            std::size_t level,
                                            const Dataset& data) {
  const auto& spec = model.spec();
  const auto table = codebook.materialize(level);
  const CodewordView<float> view(table.values(), codebook.dim());
  return evaluate_with<float>(model, data, [&](const grad::Tensor<float>& xe) {
    const std::size_t n = xe.rows();
    const std::size_t d = spec.segment_dim;
    std::vector<std::int32_t> idx(n * spec.segments);
    for (std::size_t m = 0; m < spec.segments; ++m) {
      kernels::assign_nearest(xe.values().data() + m * d, n, spec.segments * d, d,
                              view.data().data(), view.size(), idx.data() + m,
                              spec.segments);
    }
    grad::Tensor<float> z(xe.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto cw = codebook.codeword(
          BitString::from_index(static_cast<std::size_t>(idx[i]), level));
      std::copy(cw.begin(), cw.end(), z.values().begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return z;
  });
}

std::vector<FixedRateModel> train_fixed_rate_models(const ExperimentConfig& cfg,
                                                    const TaskModel<float>& warm,
                                                    const Dataset& train,
                                                    const EpochLogger& log) {
  std::vector<FixedRateModel> out;
  for (std::size_t r = 1; r <= cfg.plan.max_level; ++r) {
    auto run = train_fixed_rate<float>(warm, train, cfg.plan, r, log);
    out.push_back({r, std::move(run.model), std::move(run.codebook)});
  }
  return out;
}

// ---------------------------------------------------------------------------

double DynamicTable::at(const std::string& scheme, const std::string& scen) const {
  const auto s = std::find(schemes.begin(), schemes.end(), scheme);
  const auto c = std::find(scenarios.begin(), scenarios.end(), scen);
  if (s == schemes.end() || c == scenarios.end()) {
    throw std::out_of_range("dynamic table: no cell (" + scheme + ", " + scen + ")");
  }
  return accuracy[static_cast<std::size_t>(s - schemes.begin())]
                 [static_cast<std::size_t>(c - scenarios.begin())];
}

std::string DynamicTable::to_text(const ExperimentConfig& cfg) const {
  std::ostringstream out;
  out << "Average accuracy (%) under time-varying channels, d="
      << cfg.network.segment_dim << ", M=" << cfg.network.segments
      << ", steps=" << cfg.steps << ", seed=" << cfg.seed << "\n";
  std::size_t width = 8;
  for (const auto& s : schemes) width = std::max(width, s.size());
  out << std::left << std::setw(static_cast<int>(width)) << "scheme";
  for (const auto& c : scenarios) out << "  " << std::right << std::setw(8) << c;
  out << "\n";
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    out << std::left << std::setw(static_cast<int>(width)) << schemes[s];
    for (std::size_t c = 0; c < scenarios.size(); ++c) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%8.2f", 100.0 * accuracy[s][c]);
      out << "  " << buf;
    }
    out << "\n";
  }
  return out.str();
}

std::string DynamicTable::to_csv(const ExperimentConfig& cfg) const {
  std::string out = config_comment(cfg);
  out += "scheme,d,M,scenario,k,accuracy,seed\n";
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    for (std::size_t c = 0; c < scenarios.size(); ++c) {
      out += schemes[s] + "," + std::to_string(cfg.network.segment_dim) + "," +
             std::to_string(cfg.network.segments) + "," + scenarios[c] + "," +
             format_real(k_values[c]) + "," + format_real(accuracy[s][c]) + "," +
             std::to_string(cfg.seed) + "\n";
    }
  }
  return out;
}

std::string DynamicTable::trace_csv() const {
  std::string out = "scenario,t,C_t,B_t,level,latency,scheme,correct\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& r = trace[i];
    out += trace_scenario[i] + "," + std::to_string(r.t) + "," +
           format_real(r.capacity) + "," + std::to_string(r.budget) + "," +
           std::to_string(r.level) + "," + format_real(r.latency) + "," + r.scheme +
           "," + std::to_string(r.correct) + "\n";
  }
  return out;
}

std::vector<InferenceScheme> build_schemes(const ExperimentConfig& cfg,
                                           const DynamicInputs& in,
                                           const Dataset& test) {
  const std::size_t L = cfg.plan.max_level;
  const std::size_t M = cfg.network.segments;
  std::vector<InferenceScheme> out;
  if (in.fixed) {
    InferenceScheme multi{"Multiple Fixed-Rate", InferenceScheme::Kind::adaptive, 0, {}};
    for (const auto& f : *in.fixed) {
      multi.correct.push_back(evaluate<float>(f.model, LevelTables<float>::nested(f.codebook),
                                              uniform_levels(M, f.rate), test)
                                  .correct);
    }
    if (multi.correct.size() != L) {
      throw std::invalid_argument("dynamic table: need one fixed-rate model per level");
    }
    out.push_back(std::move(multi));
    for (auto r : cfg.single_rates) {
      InferenceScheme single{"Single-Rate " + std::to_string(r) + "-bit",
                             InferenceScheme::Kind::fixed_rate, r, {}};
      single.correct.resize(L);
      single.correct[r - 1] = out.front().correct[r - 1];
      out.push_back(std::move(single));
    }
  }
  if (in.artoveq_model && in.artoveq_codebook) {
    InferenceScheme s{"ARTOVeQ", InferenceScheme::Kind::adaptive, 0, {}};
    const auto tables = LevelTables<float>::nested(*in.artoveq_codebook);
    for (std::size_t l = 1; l <= L; ++l) {
      s.correct.push_back(
          evaluate<float>(*in.artoveq_model, tables, uniform_levels(M, l), test).correct);
    }
    out.push_back(std::move(s));
  }
  if (in.progressive_model && in.progressive_codebook) {
    InferenceScheme s{"Progressive ARTOVeQ", InferenceScheme::Kind::adaptive, 0, {}};
    for (std::size_t l = 1; l <= L; ++l) {
      s.correct.push_back(evaluate_progressive_incremental(
                              *in.progressive_model, *in.progressive_codebook, l, test)
                              .correct);
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::invalid_argument("dynamic table: no schemes to simulate");
  return out;
}

DynamicTable run_dynamic_table(const ExperimentConfig& cfg, const DynamicInputs& in,
                               const Dataset& test) {
  const auto schemes = build_schemes(cfg, in, test);
  DynamicTable table;
  for (const auto& s : schemes) table.schemes.push_back(s.name);
  table.accuracy.assign(schemes.size(), {});

  std::vector<std::pair<std::string, ScenarioSpec>> runs;
  if (cfg.k) {
    ScenarioSpec s;
    s.k = *cfg.k;
    runs.emplace_back("k=" + format_real(*cfg.k), s);
  } else {
    for (const auto& name : cfg.scenarios) runs.emplace_back(name, scenario(name));
  }
  for (auto& [name, spec] : runs) {
    spec.segments = cfg.network.segments;
    spec.max_bits = cfg.plan.max_level;
    SessionConfig sc;
    sc.scenario = spec;
    sc.steps = cfg.steps;
    sc.tau_max = cfg.tau_max;
    sc.capacity_scale = cfg.capacity_scale;
    sc.rule = cfg.latency_rule;
    sc.coherence = cfg.coherence;
    sc.seed = cfg.seed;
    const auto res = simulate_session(schemes, sc);
    table.scenarios.push_back(name);
    table.k_values.push_back(spec.k);
    for (std::size_t s = 0; s < schemes.size(); ++s) {
      table.accuracy[s].push_back(res.accuracy[s]);
    }
    for (const auto& r : res.trace) {
      table.trace.push_back(r);
      table.trace_scenario.push_back(name);
    }
  }
  return table;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman: need two equal-length series of >= 2");
  }
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace artoveq
