#pragma once

// Experiment plumbing: datasets, the flat configuration file, bit
// allocations, the rate / mixed / dynamic-channel experiments and their
// result files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "artoveq/channel.hpp"
#include "artoveq/codebook.hpp"
#include "artoveq/taskmodel.hpp"
#include "artoveq/training.hpp"

namespace artoveq {

struct SyntheticTaskSpec {
  std::size_t classes = 8;
  std::size_t input_dim = 16;
  // "random": class means drawn N(0, separation^2 I). "line": means evenly
  // spaced `separation` apart along one random direction, so classes are
  // ordered and neighbours overlap. Samples add N(0, noise^2 I).
  std::string layout = "random";
  double separation = 1.0;
  double noise = 1.0;
  std::size_t train_samples = 2000;
  std::size_t test_samples = 500;
  std::uint64_t seed = 2024;

  void validate() const;
};

struct SplitDataset {
  Dataset train;
  Dataset test;
  std::vector<std::vector<float>> class_means;
};

SplitDataset make_synthetic(const SyntheticTaskSpec& spec);

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// IDX image file (magic 0x00000803) plus label file (0x00000801). Pixels are
// scaled to [0, 1]; classes = max label + 1 unless given.
Dataset load_idx_images(const std::filesystem::path& images,
                        const std::filesystem::path& labels,
                        std::size_t classes = 0);

// Non-increasing allocation summing to `budget`, with neighbouring segments
// at most one level apart; grows from all ones by adding a bit to the
// lowest-index segment that keeps those properties.
std::vector<std::size_t> mixed_allocation(std::size_t budget,
                                          std::size_t segments,
                                          std::size_t max_level);

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string dataset = "synthetic";  // synthetic | idx
  SyntheticTaskSpec synthetic;
  std::string idx_train_images, idx_train_labels;
  std::string idx_test_images, idx_test_labels;
  NetworkSpec network;
  TrainPlan plan;
  double beta = 0.25;
  double eta = 1.0;
  // Dynamic channel.
  std::vector<std::string> scenarios{"S1", "S2", "S3"};
  std::optional<double> k;  // overrides scenarios with a single custom skew
  std::size_t steps = 1000;
  double tau_max = 0.02;
  double capacity_scale = 0.0;
  double coherence = 1.0;
  LatencyRule latency_rule = LatencyRule::eq4;
  std::vector<std::size_t> single_rates{1, 4, 8};

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  // Every key in a fixed order; parse(to_text()) reproduces this config.
  std::string to_text() const;
  // Applies seed/beta/eta/level to the derived plan and checks everything.
  void finalize();
  std::vector<std::string> keys() const;
};

SplitDataset load_data(const ExperimentConfig& cfg);

struct SweepRow {
  std::string scheme;
  std::size_t d = 0;
  std::size_t segments = 0;
  std::vector<std::size_t> allocation;
  std::size_t bits = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  std::uint64_t seed = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  void add(std::string scheme, const ExperimentConfig& cfg,
           std::vector<std::size_t> allocation, const EvalResult& eval);
  // Leading '#' lines carry the configuration.
  std::string to_csv(const ExperimentConfig& cfg) const;
};

std::string format_real(double value);
std::string format_allocation(const std::vector<std::size_t>& allocation);

// Every level of one nested codebook, optionally with the per-rate fixed
// VQ-VAE and single-rate LBG baselines.
SweepResult run_rate_sweep(const ExperimentConfig& cfg,
                           const TaskModel<float>& model,
                           const NestedCodebook<float>& codebook,
                           const TaskModel<float>* warm,
                           const SplitDataset& data);

// Each budget in [M, M*L] with its mixed allocation, plus the identical
// allocation where the budget divides evenly.
SweepResult run_mixed_vs_identical(const ExperimentConfig& cfg,
                                   const TaskModel<float>& model,
                                   const NestedCodebook<float>& codebook,
                                   const Dataset& test);

// Sender quantizes against materialize(level); the receiver rebuilds each
// sub-vector by summing one difference vector per received bit.
EvalResult evaluate_progressive_incremental(const TaskModel<float>& model,
                                            const ProgressiveCodebook<float>& codebook,
                                            std::size_t level,
                                            const Dataset& data);

struct FixedRateModel {
  std::size_t rate = 0;
  TaskModel<float> model;
  NestedCodebook<float> codebook;
};

std::vector<FixedRateModel> train_fixed_rate_models(
    const ExperimentConfig& cfg, const TaskModel<float>& warm,
    const Dataset& train, const EpochLogger& log = {});

struct DynamicInputs {
  const TaskModel<float>* artoveq_model = nullptr;
  const NestedCodebook<float>* artoveq_codebook = nullptr;
  const TaskModel<float>* progressive_model = nullptr;
  const ProgressiveCodebook<float>* progressive_codebook = nullptr;
  // One per rate 1..L.
  const std::vector<FixedRateModel>* fixed = nullptr;
};

struct DynamicTable {
  std::vector<std::string> schemes;
  std::vector<std::string> scenarios;
  std::vector<double> k_values;
  // accuracy[scheme][scenario]
  std::vector<std::vector<double>> accuracy;
  std::vector<TraceRecord> trace;  // tagged by scenario order
  std::vector<std::string> trace_scenario;

  double at(const std::string& scheme, const std::string& scenario) const;
  std::string to_text(const ExperimentConfig& cfg) const;
  std::string to_csv(const ExperimentConfig& cfg) const;
  std::string trace_csv() const;
};

std::vector<InferenceScheme> build_schemes(const ExperimentConfig& cfg,
                                           const DynamicInputs& in,
                                           const Dataset& test);

DynamicTable run_dynamic_table(const ExperimentConfig& cfg,
                               const DynamicInputs& in, const Dataset& test);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace artoveq
