#pragma once

// Training procedures: encoder-decoder warm start, LBG codebook
// initialization, level-by-level joint adaptation of the nested codebook,
// the per-segment mixed-resolution schedule and successive-refinement
// (progressive) training. Also the fixed-rate and LBG baselines and
// evaluation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "artoveq/codebook.hpp"
#include "artoveq/gradcore.hpp"
#include "artoveq/taskmodel.hpp"
#include "artoveq/vq_layer.hpp"

namespace artoveq {

enum class Schedule { variable_rate, mixed_resolution, progressive };
enum class MixedOrder { sequential, round_robin };

Schedule parse_schedule(std::string_view name);
std::string_view to_string(Schedule schedule);
MixedOrder parse_mixed_order(std::string_view name);
std::string_view to_string(MixedOrder order);

struct TrainPlan {
  std::size_t max_level = 8;
  std::size_t stage1_epochs = 20;
  std::size_t epochs_per_level = 4;
  std::size_t batch_size = 32;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  LossConfig loss = LossConfig::defaults(8);
  Schedule schedule = Schedule::variable_rate;
  MixedOrder mixed_order = MixedOrder::sequential;
  // Update only the newest difference pair at each progressive level.
  bool progressive_freeze_earlier = false;
  // Apply the drift penalty as an exact proximal step after each update
  // instead of through the gradient; stable for any eta.
  bool proximal_drift = true;
  LbgConfig lbg;
  // Fixed-rate VQ-VAE baseline epochs; 0 means epochs_per_level.
  std::size_t fixed_rate_epochs = 0;
  // LBG baseline decoder fine-tuning, as a fraction of all stage-3 epochs.
  double lbg_finetune_fraction = 0.2;

  void validate() const;
};

// Independent generator for one consumer of the plan seed.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

namespace streams {
inline constexpr std::uint64_t model_init = 1;
inline constexpr std::uint64_t stage1_batches = 2;
inline constexpr std::uint64_t stage3_batches = 3;
inline constexpr std::uint64_t progressive_init = 4;
inline constexpr std::uint64_t baseline_batches = 5;
}  // namespace streams

// Random partition of [0, n) into consecutive batches of at most batch_size.
std::vector<std::vector<std::size_t>> partition_batches(std::size_t n,
                                                        std::size_t batch_size,
                                                        std::mt19937_64& rng);

struct EpochRecord {
  std::string stage;
  std::size_t level = 0;
  std::size_t epoch = 0;
  double total = 0.0;
  double task = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
  double drift = 0.0;
  double wall_seconds = 0.0;
};

using EpochLogger = std::function<void(const EpochRecord&)>;

std::string format_epoch_record(const EpochRecord& record);

// SGD with momentum. Rows past `rows` of a parameter are never touched.
template <typename T>
class Sgd {
 public:
  struct Slot {
    grad::Var<T> var;
    std::size_t rows = 0;  // 0 = all rows
    // Optional proximal pull of the first anchor.rows rows toward anchor.
    PrefixSnapshot<T> anchor;
    double anchor_eta = 0.0;
  };

  Sgd(double learning_rate, double momentum)
      : lr_(learning_rate), momentum_(momentum) {}

  void set_slots(std::vector<Slot> slots);
  const std::vector<Slot>& slots() const noexcept { return slots_; }
  void zero_grad();
  void step();

 private:
  double lr_;
  double momentum_;
  std::vector<Slot> slots_;
  std::vector<std::vector<T>> velocity_;
};

// One quantized decoder pass: segment m is quantized at levels[m].
struct QuantizedPass {
  std::vector<std::size_t> levels;
  double beta = 0.25;
};

template <typename T>
struct LossBreakdown {
  grad::Var<T> total;
  double task = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
  double drift = 0.0;
  std::size_t decoder_passes = 0;
};

// Codebook as seen by the loss graph. Nested: one variable for every level.
// Progressive: one materialized variable per level.
template <typename T>
struct GraphCodebook {
  std::vector<grad::Var<T>> level_vars;
  LevelTables<T> tables;
  bool nested = true;

  static GraphCodebook from_nested(const NestedCodebook<T>& codebook);
  // Pairs at levels listed in `trainable` enter as variables, the rest as
  // constants.
  static GraphCodebook from_progressive(ProgressiveCodebook<T>& codebook,
                                        std::size_t level,
                                        std::span<const std::size_t> trainable);
};

// Sum over passes of task + codebook + commitment terms (batch means of the
// per-sample sums over segments), plus eta * drift.
template <typename T>
LossBreakdown<T> batch_loss(const TaskModel<T>& model,
                            const GraphCodebook<T>& codebook,
                            const Dataset& data,
                            std::span<const std::size_t> batch,
                            std::span<const QuantizedPass> passes,
                            const grad::Var<T>& drift, double eta);

// Level-l cumulative loss over j = 1..l for a nested codebook.
template <typename T>
LossBreakdown<T> level_loss(const TaskModel<T>& model,
                            const NestedCodebook<T>& codebook,
                            const Dataset& data,
                            std::span<const std::size_t> batch,
                            std::size_t level, const LossConfig& loss,
                            const PrefixSnapshot<T>& snapshot);

// Sum over every level of the level-l loss, assembled from one pass per
// resolution weighted by the number of levels that include it.
template <typename T>
grad::Var<T> overall_loss(const TaskModel<T>& model,
                          const NestedCodebook<T>& codebook,
                          const Dataset& data,
                          std::span<const std::size_t> batch,
                          const LossConfig& loss,
                          std::span<const PrefixSnapshot<T>> snapshots);

template <typename T>
struct ArtoveqRun {
  TaskModel<T> model;
  NestedCodebook<T> codebook;
  std::vector<T> lbg_codewords;
};

template <typename T>
struct ProgressiveRun {
  TaskModel<T> model;
  ProgressiveCodebook<T> codebook;
};

template <typename T>
void stage1_warmstart(TaskModel<T>& model, const Dataset& data,
                      const TrainPlan& plan, const EpochLogger& log = {});

// Encodes every training sample, splits into segments and fits LBG with
// 2^max_level codewords.
template <typename T>
LbgResult<T> stage2_codebook_init(const TaskModel<T>& model,
                                  const Dataset& data, const LbgConfig& cfg);

// Sub-vector dataset D_Q as a flat [N*M, d] buffer.
template <typename T>
std::vector<T> encode_subvectors(const TaskModel<T>& model,
                                 const Dataset& data);

template <typename T>
void stage3_joint_adaptation(TaskModel<T>& model, NestedCodebook<T>& codebook,
                             std::span<const T> lbg_codewords,
                             const Dataset& data, const TrainPlan& plan,
                             const EpochLogger& log = {});

struct MixedPhase {
  std::vector<std::size_t> levels;
  std::size_t segment = 0;  // the segment stepped in this phase
  std::size_t level = 0;    // its new level
  std::size_t bits() const;
};

// Every phase in training order.
std::vector<MixedPhase> mixed_phase_schedule(std::size_t segments,
                                             std::size_t max_level,
                                             MixedOrder order);

template <typename T>
void stage3_mixed_resolution(TaskModel<T>& model, NestedCodebook<T>& codebook,
                             std::span<const T> lbg_codewords,
                             const Dataset& data, const TrainPlan& plan,
                             const EpochLogger& log = {});

// Progressive training on a warm-started model.
template <typename T>
ProgressiveCodebook<T> adapt_progressive(TaskModel<T>& model,
                                         const Dataset& data,
                                         const TrainPlan& plan,
                                         const EpochLogger& log = {});

// Full pipelines from a fresh model.
template <typename T>
ArtoveqRun<T> train_artoveq(const NetworkSpec& spec, const Dataset& data,
                            const TrainPlan& plan, const EpochLogger& log = {});
template <typename T>
ProgressiveRun<T> train_progressive(const NetworkSpec& spec,
                                    const Dataset& data, const TrainPlan& plan,
                                    const EpochLogger& log = {});

// Fixed-rate VQ-VAE at `rate` bits per segment, from a warm-started model.
template <typename T>
ArtoveqRun<T> train_fixed_rate(const TaskModel<T>& warm, const Dataset& data,
                               const TrainPlan& plan, std::size_t rate,
                               const EpochLogger& log = {});

// LBG codebook of 2^rate codewords on frozen encoder outputs; decoder
// fine-tuned on the quantized features.
template <typename T>
ArtoveqRun<T> train_lbg_baseline(const TaskModel<T>& warm,
                                 const Dataset& data, const TrainPlan& plan,
                                 std::size_t rate,
                                 const EpochLogger& log = {});

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<std::uint8_t> correct;
};

template <typename T>
EvalResult evaluate(const TaskModel<T>& model, const LevelTables<T>& tables,
                    std::span<const std::size_t> levels, const Dataset& data);
// Decoder applied to features(encoder output) for every sample.
template <typename T>
EvalResult evaluate_with(
    const TaskModel<T>& model, const Dataset& data,
    const std::function<grad::Tensor<T>(const grad::Tensor<T>&)>& features);
template <typename T>
EvalResult evaluate_unquantized(const TaskModel<T>& model,
                                const Dataset& data);

std::vector<std::size_t> uniform_levels(std::size_t segments,
                                        std::size_t level);

}  // namespace artoveq
