#include "artoveq/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>

namespace artoveq {

Schedule parse_schedule(std::string_view name) {
  if (name == "variable_rate") return Schedule::variable_rate;
  if (name == "mixed_resolution") return Schedule::mixed_resolution;
  if (name == "progressive") return Schedule::progressive;
  throw std::invalid_argument("unknown schedule '" + std::string(name) + "'");
}

std::string_view to_string(Schedule schedule) {
  switch (schedule) {
    case Schedule::variable_rate: return "variable_rate";
    case Schedule::mixed_resolution: return "mixed_resolution";
    case Schedule::progressive: return "progressive";
  }
  return "?";
}

MixedOrder parse_mixed_order(std::string_view name) {
  if (name == "sequential") return MixedOrder::sequential;
  if (name == "round_robin") return MixedOrder::round_robin;
  throw std::invalid_argument("unknown mixed order '" + std::string(name) + "'");
}

std::string_view to_string(MixedOrder order) {
  return order == MixedOrder::sequential ? "sequential" : "round_robin";
}

void TrainPlan::validate() const {
  if (max_level == 0 || max_level > 16) {
    throw std::invalid_argument("train plan: max_level must be in [1, 16]");
  }
  if (batch_size == 0) throw std::invalid_argument("train plan: batch_size must be > 0");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("train plan: learning_rate must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("train plan: momentum must be in [0, 1)");
  }
  if (!(lbg_finetune_fraction >= 0.0)) {
    throw std::invalid_argument("train plan: lbg_finetune_fraction must be >= 0");
  }
  loss.validate(max_level);
}

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{seed, stream};
  return std::mt19937_64(seq);
}

std::vector<std::vector<std::size_t>> partition_batches(std::size_t n,
                                                        std::size_t batch_size,
                                                        std::mt19937_64& rng) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be > 0");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  }
  return out;
}

std::string format_epoch_record(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "stage=%s level=%zu epoch=%zu total=%.6g task=%.6g "
                "codebook=%.6g commitment=%.6g drift=%.6g wall=%.3fs",
                r.stage.c_str(), r.level, r.epoch, r.total, r.task, r.codebook,
                r.commitment, r.drift, r.wall_seconds);
  return buf;
}

std::vector<std::size_t> uniform_levels(std::size_t segments,
                                        std::size_t level) {
  return std::vector<std::size_t>(segments, level);
}

// ---------------------------------------------------------------------------

template <typename T>
void Sgd<T>::set_slots(std::vector<Slot> slots) {
  slots_ = std::move(slots);
  velocity_.clear();
  for (const auto& s : slots_) {
    const auto& v = s.var.value();
    const std::size_t n = s.rows ? std::min(v.size(), s.rows * v.cols()) : v.size();
    velocity_.emplace_back(n, T{0});
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& s : slots_) s.var.zero_grad();
}

template <typename T>
void Sgd<T>::step() {
  const T lr = static_cast<T>(lr_);
  const T mu = static_cast<T>(momentum_);
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    auto& slot = slots_[i];
    auto& vel = velocity_[i];
    auto values = slot.var.mutable_value().values();
    if (slot.var.has_grad()) {
      const auto g = slot.var.grad();
      for (std::size_t k = 0; k < vel.size(); ++k) {
        vel[k] = mu * vel[k] + g[k];
        values[k] -= lr * vel[k];
      }
    }
    if (slot.anchor_eta > 0.0 && slot.anchor.rows > 0) {
      const T pull = static_cast<T>(2.0 * lr_ * slot.anchor_eta);
      const T denom = T{1} + pull;
      for (std::size_t k = 0; k < slot.anchor.values.size(); ++k) {
        values[k] = (values[k] + pull * slot.anchor.values[k]) / denom;
      }
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
GraphCodebook<T> GraphCodebook<T>::from_nested(const NestedCodebook<T>& codebook) {
  GraphCodebook out;
  out.nested = true;
  out.level_vars.push_back(codebook.parameter());
  out.tables = LevelTables<T>::nested(codebook);
  return out;
}

template <typename T>
GraphCodebook<T> GraphCodebook<T>::from_progressive(
    ProgressiveCodebook<T>& codebook, std::size_t level,
    std::span<const std::size_t> trainable) {
  if (level < 1 || level > codebook.max_level()) {
    throw std::out_of_range("progressive graph: level out of range");
  }
  std::vector<grad::Var<T>> pairs;
  for (std::size_t j = 1; j <= level; ++j) {
    const bool train =
        std::find(trainable.begin(), trainable.end(), j) != trainable.end();
    pairs.push_back(train ? codebook.pair(j)
                          : grad::Var<T>::constant(codebook.pair(j).value()));
  }
  GraphCodebook out;
  out.nested = false;
  std::vector<grad::Tensor<T>> tables;
  // Build the level tables incrementally so each level shares its parent.
  const std::size_t dim = codebook.dim();
  auto table = grad::Var<T>::constant(grad::Tensor<T>(grad::Shape{1, dim}, T{0}));
  for (std::size_t j = 1; j <= level; ++j) {
    const std::size_t count = std::size_t{1} << j;
    std::vector<std::int32_t> parent(count), bit(count);
    for (std::size_t i = 0; i < count; ++i) {
      parent[i] = static_cast<std::int32_t>(i >> 1);
      bit[i] = static_cast<std::int32_t>(i & 1u);
    }
    table = grad::add(grad::gather_rows<T>(table, parent),
                      grad::gather_rows<T>(pairs[j - 1], bit));
    out.level_vars.push_back(table);
    tables.push_back(table.value());
  }
  out.tables = LevelTables<T>::from_tensors(std::move(tables));
  return out;
}

namespace {

template <typename T>
struct PassParts {
  grad::Var<T> task;
  grad::Var<T> codebook;
  grad::Var<T> commitment;
};

// One decoder pass over precomputed encoder output xe [n, M*d].
template <typename T>
PassParts<T> quantized_pass(const TaskModel<T>& model, const grad::Var<T>& xe,
                            const GraphCodebook<T>& codebook,
                            std::span<const std::size_t> levels,
                            std::span<const double> betas,
                            std::span<const std::int32_t> labels) {
  const auto& spec = model.spec();
  const std::size_t n = xe.shape()[0];
  const std::size_t d = spec.segment_dim;
  const std::size_t segments = spec.segments;
  if (levels.size() != segments) {
    throw std::invalid_argument("quantized pass: " + std::to_string(levels.size()) +
                                " levels for " + std::to_string(segments) +
                                " segments");
  }
  const auto idx =
      assign_segments<T>(xe.value().values(), n, d, levels, codebook.tables);

  grad::Var<T> source;
  if (codebook.nested) {
    source = codebook.level_vars.front();
  } else {
    const std::size_t l = levels.front();
    for (auto v : levels) {
      if (v != l) {
        throw std::invalid_argument(
            "quantized pass: progressive codebooks train at uniform levels only");
      }
    }
    source = codebook.level_vars.at(l - 1);
  }

  const auto xs = grad::reshape(xe, grad::Shape{n * segments, d});
  const auto z = grad::gather_rows<T>(source, idx);
  const auto decoder_in =
      grad::reshape(straight_through(xs, z.value()), grad::Shape{n, segments * d});

  PassParts<T> out;
  out.task = grad::cross_entropy<T>(model.decode_graph(decoder_in), labels);
  const T inv_n = static_cast<T>(1.0 / static_cast<double>(n));

  const bool uniform_beta =
      std::all_of(betas.begin(), betas.end(), [&](double b) { return b == betas.front(); });
  if (uniform_beta) {
    const auto terms = vq_loss_terms(xs, z, betas.front());
    out.codebook = grad::scale(terms.codebook_term, inv_n);
    out.commitment = grad::scale(terms.commitment_term, inv_n);
  } else {
    const auto terms = vq_loss_terms(xs, z, 1.0);
    out.codebook = grad::scale(terms.codebook_term, inv_n);
    grad::Tensor<T> w(grad::Shape{n * segments, d});
    for (std::size_t r = 0; r < n * segments; ++r) {
      const T s = static_cast<T>(std::sqrt(betas[r % segments]));
      for (std::size_t c = 0; c < d; ++c) w[r * d + c] = s;
    }
    const auto weighted = grad::mul(grad::sub(xs, grad::stop_gradient(z)),
                                    grad::Var<T>::constant(std::move(w)));
    out.commitment = grad::scale(grad::squared_l2_norm(weighted), inv_n);
  }
  return out;
}

template <typename T>
std::vector<double> pass_betas(const QuantizedPass& pass, std::size_t segments) {
  return std::vector<double>(segments, pass.beta);
}

template <typename T>
void accumulate(LossBreakdown<T>& out, const PassParts<T>& parts, T weight) {
  auto term = grad::add(grad::add(parts.task, parts.codebook), parts.commitment);
  if (weight != T{1}) term = grad::scale(term, weight);
  out.total = out.total ? grad::add(out.total, term) : term;
  out.task += static_cast<double>(weight) * parts.task.value().item();
  out.codebook += static_cast<double>(weight) * parts.codebook.value().item();
  out.commitment += static_cast<double>(weight) * parts.commitment.value().item();
  ++out.decoder_passes;
}

template <typename T>
void add_drift(LossBreakdown<T>& out, const grad::Var<T>& drift, double eta) {
  if (!drift || eta == 0.0) return;
  out.drift += eta * drift.value().item();
  out.total = grad::add(out.total, grad::scale(drift, static_cast<T>(eta)));
}

template <typename T>
LossBreakdown<T> passes_loss(const TaskModel<T>& model, const grad::Var<T>& xe,
                             const GraphCodebook<T>& codebook,
                             std::span<const QuantizedPass> passes,
                             std::span<const std::int32_t> labels,
                             const std::vector<std::vector<double>>* betas) {
  if (passes.empty()) throw std::invalid_argument("batch loss: no passes");
  LossBreakdown<T> out;
  for (std::size_t p = 0; p < passes.size(); ++p) {
    const auto b = betas ? (*betas)[p]
                         : pass_betas<T>(passes[p], model.spec().segments);
    accumulate(out, quantized_pass(model, xe, codebook, passes[p].levels, b, labels),
               T{1});
  }
  return out;
}

}  // namespace

template <typename T>
LossBreakdown<T> batch_loss(const TaskModel<T>& model,
                            const GraphCodebook<T>& codebook,
                            const Dataset& data,
                            std::span<const std::size_t> batch,
                            std::span<const QuantizedPass> passes,
                            const grad::Var<T>& drift, double eta) {
  if (batch.empty()) throw std::invalid_argument("batch loss: empty batch");
  const auto labels = data.labels(batch);
  const auto xe = model.encode_graph(grad::Var<T>::constant(data.inputs<T>(batch)));
  auto out = passes_loss(model, xe, codebook, passes, labels, nullptr);
  add_drift(out, drift, eta);
  return out;
}

namespace {

std::vector<QuantizedPass> cumulative_passes(std::size_t segments,
                                             std::size_t level,
                                             const LossConfig& loss) {
  std::vector<QuantizedPass> passes;
  for (std::size_t j = 1; j <= level; ++j) {
    passes.push_back({uniform_levels(segments, j), loss.beta_per_level.at(j - 1)});
  }
  return passes;
}

double level_eta(const LossConfig& loss, std::size_t level) {
  return level >= 2 ? loss.eta_per_level.at(level - 1) : 0.0;
}

}  // namespace

template <typename T>
LossBreakdown<T> level_loss(const TaskModel<T>& model,
                            const NestedCodebook<T>& codebook,
                            const Dataset& data,
                            std::span<const std::size_t> batch,
                            std::size_t level, const LossConfig& loss,
                            const PrefixSnapshot<T>& snapshot) {
  if (level < 1 || level > codebook.max_level()) {
    throw std::out_of_range("level_loss: level out of range");
  }
  const auto passes = cumulative_passes(model.spec().segments, level, loss);
  const auto graph = GraphCodebook<T>::from_nested(codebook);
  const auto drift = drift_penalty(codebook.parameter(), snapshot);
  return batch_loss(model, graph, data, batch, passes, drift,
                    level_eta(loss, level));
}

template <typename T>
grad::Var<T> overall_loss(const TaskModel<T>& model,
                          const NestedCodebook<T>& codebook,
                          const Dataset& data,
                          std::span<const std::size_t> batch,
                          const LossConfig& loss,
                          std::span<const PrefixSnapshot<T>> snapshots) {
  const std::size_t L = codebook.max_level();
  if (snapshots.size() != L) {
    throw std::invalid_argument("overall_loss: need one snapshot per level");
  }
  if (batch.empty()) throw std::invalid_argument("overall_loss: empty batch");
  const auto labels = data.labels(batch);
  const auto xe = model.encode_graph(grad::Var<T>::constant(data.inputs<T>(batch)));
  const auto graph = GraphCodebook<T>::from_nested(codebook);
  LossBreakdown<T> out;
  for (std::size_t j = 1; j <= L; ++j) {
    const std::vector<double> betas(model.spec().segments, loss.beta_per_level.at(j - 1));
    const auto levels = uniform_levels(model.spec().segments, j);
    accumulate(out, quantized_pass(model, xe, graph, levels, betas, labels),
               static_cast<T>(L - j + 1));
  }
  for (std::size_t l = 1; l <= L; ++l) {
    add_drift(out, drift_penalty(codebook.parameter(), snapshots[l - 1]),
              level_eta(loss, l));
  }
  return out.total;
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

template <typename T>
using BatchFn = std::function<LossBreakdown<T>(std::span<const std::size_t>)>;

template <typename T>
void run_epochs(const char* stage, std::size_t level, std::size_t epochs,
                Sgd<T>& opt, std::size_t n, std::size_t batch_size,
                std::mt19937_64& rng, const BatchFn<T>& loss_fn,
                const std::function<double()>& extra_drift,
                const EpochLogger& log) {
  for (std::size_t e = 1; e <= epochs; ++e) {
    const auto start = Clock::now();
    EpochRecord rec;
    rec.stage = stage;
    rec.level = level;
    rec.epoch = e;
    const auto batches = partition_batches(n, batch_size, rng);
    for (const auto& b : batches) {
      opt.zero_grad();
      const auto lb = loss_fn(b);
      grad::backward(lb.total);
      opt.step();
      rec.total += lb.total.value().item();
      rec.task += lb.task;
      rec.codebook += lb.codebook;
      rec.commitment += lb.commitment;
      rec.drift += lb.drift;
    }
    const double count = static_cast<double>(batches.size());
    rec.total /= count;
    rec.task /= count;
    rec.codebook /= count;
    rec.commitment /= count;
    rec.drift /= count;
    if (extra_drift) {
      const double d = extra_drift();
      rec.drift += d;
      rec.total += d;
    }
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (log) log(rec);
  }
}

template <typename T>
std::vector<typename Sgd<T>::Slot> model_slots(const std::vector<grad::Var<T>>& params) {
  std::vector<typename Sgd<T>::Slot> slots;
  for (const auto& p : params) slots.push_back({p, 0, {}, 0.0});
  return slots;
}

template <typename T>
void require_data(const Dataset& data, const NetworkSpec& spec, const char* op) {
  if (data.empty()) {
    throw std::invalid_argument(std::string(op) + ": empty dataset");
  }
  if (data.input_dim() != spec.input_dim || data.classes() > spec.classes) {
    throw std::invalid_argument(std::string(op) +
                                ": dataset does not match the network spec");
  }
}

// Copies LBG rows [begin, end) into the nested codebook.
template <typename T>
void load_rows(NestedCodebook<T>& codebook, std::span<const T> lbg,
               std::size_t begin, std::size_t end) {
  const std::size_t d = codebook.dim();
  if (lbg.size() < end * d) {
    throw std::invalid_argument("codebook init: too few LBG codewords");
  }
  for (std::size_t k = begin; k < end; ++k) {
    codebook.set_codeword(k, lbg.subspan(k * d, d));
  }
}

}  // namespace

template <typename T>
void stage1_warmstart(TaskModel<T>& model, const Dataset& data,
                      const TrainPlan& plan, const EpochLogger& log) {
  plan.validate();
  require_data<T>(data, model.spec(), "stage1");
  Sgd<T> opt(plan.learning_rate, plan.momentum);
  opt.set_slots(model_slots(model.parameters()));
  auto rng = make_stream(plan.seed, streams::stage1_batches);
  run_epochs<T>("warmstart", 0, plan.stage1_epochs, opt, data.size(),
                plan.batch_size, rng,
                [&](std::span<const std::size_t> b) {
                  LossBreakdown<T> lb;
                  lb.total = warmstart_loss(model, data, b);
                  lb.task = lb.total.value().item();
                  return lb;
                },
                {}, log);
}

template <typename T>
std::vector<T> encode_subvectors(const TaskModel<T>& model,
                                 const Dataset& data) {
  std::vector<T> out;
  out.reserve(data.size() * model.spec().feature_dim());
  const auto all = data.all_indices();
  constexpr std::size_t chunk = 512;
  for (std::size_t b = 0; b < all.size(); b += chunk) {
    const std::span<const std::size_t> idx(all.data() + b,
                                           std::min(chunk, all.size() - b));
    const auto xe = model.encode_batch(data.inputs<T>(idx));
    out.insert(out.end(), xe.storage().begin(), xe.storage().end());
  }
  return out;
}

template <typename T>
LbgResult<T> stage2_codebook_init(const TaskModel<T>& model,
                                  const Dataset& data, const LbgConfig& cfg) {
  const auto points = encode_subvectors(model, data);
  return lbg_fit<T>(points, model.spec().segment_dim, cfg);
}

template <typename T>
void stage3_joint_adaptation(TaskModel<T>& model, NestedCodebook<T>& codebook,
                             std::span<const T> lbg_codewords,
                             const Dataset& data, const TrainPlan& plan,
                             const EpochLogger& log) {
  plan.validate();
  require_data<T>(data, model.spec(), "stage3");
  const std::size_t L = codebook.max_level();
  if (L > plan.max_level) {
    throw std::invalid_argument("stage3: codebook deeper than the plan");
  }
  auto rng = make_stream(plan.seed, streams::stage3_batches);
  const std::size_t M = model.spec().segments;
  for (std::size_t l = 1; l <= L; ++l) {
    const std::size_t prefix = l == 1 ? 0 : std::size_t{1} << (l - 1);
    const std::size_t rows = std::size_t{1} << l;
    load_rows<T>(codebook, lbg_codewords, prefix, rows);
    const auto snapshot = snapshot_prefix(codebook, prefix);
    const double eta = level_eta(plan.loss, l);

    Sgd<T> opt(plan.learning_rate, plan.momentum);
    auto slots = model_slots(model.parameters());
    typename Sgd<T>::Slot cb{codebook.parameter(), rows, {}, 0.0};
    if (plan.proximal_drift) {
      cb.anchor = snapshot;
      cb.anchor_eta = eta;
    }
    slots.push_back(std::move(cb));
    opt.set_slots(std::move(slots));

    const auto passes = cumulative_passes(M, l, plan.loss);
    std::function<double()> extra;
    if (plan.proximal_drift && eta > 0.0) {
      extra = [&] {
        return eta * drift_penalty(codebook.parameter(), snapshot).value().item();
      };
    }
    run_epochs<T>(
        "joint", l, plan.epochs_per_level, opt, data.size(), plan.batch_size,
        rng,
        [&](std::span<const std::size_t> b) {
          const auto graph = GraphCodebook<T>::from_nested(codebook);
          if (plan.proximal_drift) {
            return batch_loss(model, graph, data, b,
                              std::span<const QuantizedPass>(passes), {}, 0.0);
          }
          return batch_loss(model, graph, data, b,
                            std::span<const QuantizedPass>(passes),
                            drift_penalty(codebook.parameter(), snapshot), eta);
        },
        extra, log);
  }
}

std::size_t MixedPhase::bits() const {
  return std::accumulate(levels.begin(), levels.end(), std::size_t{0});
}

std::vector<MixedPhase> mixed_phase_schedule(std::size_t segments,
                                             std::size_t max_level,
                                             MixedOrder order) {
  if (segments == 0 || max_level == 0) {
    throw std::invalid_argument("mixed schedule: segments and levels must be > 0");
  }
  std::vector<MixedPhase> phases;
  std::vector<std::size_t> levels(segments, 1);
  const auto step = [&](std::size_t m, std::size_t l) {
    levels[m] = l;
    phases.push_back({levels, m, l});
  };
  if (order == MixedOrder::sequential) {
    for (std::size_t m = 0; m < segments; ++m) {
      for (std::size_t l = 1; l <= max_level; ++l) step(m, l);
    }
  } else {
    for (std::size_t l = 1; l <= max_level; ++l) {
      for (std::size_t m = 0; m < segments; ++m) step(m, l);
    }
  }
  return phases;
}

template <typename T>
void stage3_mixed_resolution(TaskModel<T>& model, NestedCodebook<T>& codebook,
                             std::span<const T> lbg_codewords,
                             const Dataset& data, const TrainPlan& plan,
                             const EpochLogger& log) {
  plan.validate();
  require_data<T>(data, model.spec(), "stage3-mixed");
  const std::size_t L = codebook.max_level();
  const std::size_t M = model.spec().segments;
  auto rng = make_stream(plan.seed, streams::stage3_batches);
  std::size_t loaded_level = 0;
  for (const auto& phase : mixed_phase_schedule(M, L, plan.mixed_order)) {
    const std::size_t top = *std::max_element(phase.levels.begin(), phase.levels.end());
    PrefixSnapshot<T> snapshot;
    double eta = 0.0;
    if (top > loaded_level) {
      const std::size_t prefix = loaded_level == 0 ? 0 : std::size_t{1} << loaded_level;
      load_rows<T>(codebook, lbg_codewords, prefix, std::size_t{1} << top);
      snapshot = snapshot_prefix(codebook, prefix);
      eta = prefix ? level_eta(plan.loss, top) : 0.0;
      loaded_level = top;
    } else {
      snapshot = snapshot_prefix(codebook, 0);
    }
    snapshot.dim = codebook.dim();

    Sgd<T> opt(plan.learning_rate, plan.momentum);
    auto slots = model_slots(model.parameters());
    typename Sgd<T>::Slot cb{codebook.parameter(), std::size_t{1} << top, {}, 0.0};
    if (plan.proximal_drift) {
      cb.anchor = snapshot;
      cb.anchor_eta = eta;
    }
    slots.push_back(std::move(cb));
    opt.set_slots(std::move(slots));

    const std::vector<QuantizedPass> passes{{phase.levels, 0.0}};
    std::vector<std::vector<double>> betas(1);
    for (auto l : phase.levels) betas[0].push_back(plan.loss.beta_per_level.at(l - 1));

    std::function<double()> extra;
    if (plan.proximal_drift && eta > 0.0) {
      extra = [&] {
        return eta * drift_penalty(codebook.parameter(), snapshot).value().item();
      };
    }
    run_epochs<T>(
        "mixed", phase.bits(), plan.epochs_per_level, opt, data.size(),
        plan.batch_size, rng,
        [&](std::span<const std::size_t> b) {
          const auto labels = data.labels(b);
          const auto xe =
              model.encode_graph(grad::Var<T>::constant(data.inputs<T>(b)));
          const auto graph = GraphCodebook<T>::from_nested(codebook);
          auto lb = passes_loss(model, xe, graph,
                                std::span<const QuantizedPass>(passes), labels,
                                &betas);
          if (!plan.proximal_drift) {
            add_drift(lb, drift_penalty(codebook.parameter(), snapshot), eta);
          }
          return lb;
        },
        extra, log);
  }
}

template <typename T>
ProgressiveCodebook<T> adapt_progressive(TaskModel<T>& model,
                                         const Dataset& data,
                                         const TrainPlan& plan,
                                         const EpochLogger& log) {
  plan.validate();
  require_data<T>(data, model.spec(), "progressive");
  const std::size_t L = plan.max_level;
  const std::size_t M = model.spec().segments;
  ProgressiveCodebook<T> codebook(model.spec().segment_dim, L);
  auto init_rng = make_stream(plan.seed, streams::progressive_init);
  auto rng = make_stream(plan.seed, streams::stage3_batches);
  for (std::size_t l = 1; l <= L; ++l) {
    codebook.randomize(l, init_rng);
    std::vector<std::size_t> trainable;
    if (plan.progressive_freeze_earlier) {
      trainable.push_back(l);
    } else {
      for (std::size_t j = 1; j <= l; ++j) trainable.push_back(j);
    }
    Sgd<T> opt(plan.learning_rate, plan.momentum);
    auto slots = model_slots(model.parameters());
    for (auto j : trainable) slots.push_back({codebook.pair(j), 0, {}, 0.0});
    opt.set_slots(std::move(slots));

    const auto passes = cumulative_passes(M, l, plan.loss);
    run_epochs<T>(
        "progressive", l, plan.epochs_per_level, opt, data.size(),
        plan.batch_size, rng,
        [&](std::span<const std::size_t> b) {
          const auto graph =
              GraphCodebook<T>::from_progressive(codebook, l, trainable);
          return batch_loss(model, graph, data, b,
                            std::span<const QuantizedPass>(passes), {}, 0.0);
        },
        {}, log);
  }
  return codebook;
}

namespace {

template <typename T>
LbgConfig lbg_for(const TrainPlan& plan, std::size_t level) {
  LbgConfig cfg = plan.lbg;
  cfg.target_size = std::size_t{1} << level;
  return cfg;
}

}  // namespace

template <typename T>
ArtoveqRun<T> train_artoveq(const NetworkSpec& spec, const Dataset& data,
                            const TrainPlan& plan, const EpochLogger& log) {
  plan.validate();
  ArtoveqRun<T> run{TaskModel<T>(spec, plan.seed),
                    NestedCodebook<T>(spec.segment_dim, plan.max_level), {}};
  stage1_warmstart(run.model, data, plan, log);
  auto lbg = stage2_codebook_init(run.model, data, lbg_for<T>(plan, plan.max_level));
  run.lbg_codewords = std::move(lbg.codewords);
  if (plan.schedule == Schedule::mixed_resolution) {
    stage3_mixed_resolution<T>(run.model, run.codebook, run.lbg_codewords, data,
                               plan, log);
  } else if (plan.schedule == Schedule::variable_rate) {
    stage3_joint_adaptation<T>(run.model, run.codebook, run.lbg_codewords, data,
                               plan, log);
  } else {
    throw std::invalid_argument(
        "train_artoveq: use train_progressive for the progressive schedule");
  }
  return run;
}

template <typename T>
ProgressiveRun<T> train_progressive(const NetworkSpec& spec,
                                    const Dataset& data, const TrainPlan& plan,
                                    const EpochLogger& log) {
  plan.validate();
  TaskModel<T> model(spec, plan.seed);
  stage1_warmstart(model, data, plan, log);
  auto codebook = adapt_progressive(model, data, plan, log);
  return {std::move(model), std::move(codebook)};
}

template <typename T>
ArtoveqRun<T> train_fixed_rate(const TaskModel<T>& warm, const Dataset& data,
                               const TrainPlan& plan, std::size_t rate,
                               const EpochLogger& log) {
  plan.validate();
  if (rate < 1 || rate > plan.max_level) {
    throw std::out_of_range("fixed rate: rate outside [1, max_level]");
  }
  require_data<T>(data, warm.spec(), "fixed-rate");
  ArtoveqRun<T> run{warm, {}, {}};
  auto lbg = stage2_codebook_init(run.model, data, lbg_for<T>(plan, rate));
  run.codebook = NestedCodebook<T>(warm.spec().segment_dim, rate, lbg.codewords);
  run.lbg_codewords = std::move(lbg.codewords);

  Sgd<T> opt(plan.learning_rate, plan.momentum);
  auto slots = model_slots(run.model.parameters());
  slots.push_back({run.codebook.parameter(), 0, {}, 0.0});
  opt.set_slots(std::move(slots));
  auto rng = make_stream(plan.seed, streams::baseline_batches);
  const std::vector<QuantizedPass> passes{
      {uniform_levels(warm.spec().segments, rate), plan.loss.beta_per_level.at(rate - 1)}};
  const std::size_t epochs =
      plan.fixed_rate_epochs ? plan.fixed_rate_epochs : plan.epochs_per_level;
  run_epochs<T>(
      "fixed-rate", rate, epochs, opt, data.size(), plan.batch_size, rng,
      [&](std::span<const std::size_t> b) {
        const auto graph = GraphCodebook<T>::from_nested(run.codebook);
        return batch_loss(run.model, graph, data, b,
                          std::span<const QuantizedPass>(passes), {}, 0.0);
      },
      {}, log);
  return run;
}

template <typename T>
ArtoveqRun<T> train_lbg_baseline(const TaskModel<T>& warm,
                                 const Dataset& data, const TrainPlan& plan,
                                 std::size_t rate, const EpochLogger& log) {
  plan.validate();
  if (rate < 1 || rate > plan.max_level) {
    throw std::out_of_range("lbg baseline: rate outside [1, max_level]");
  }
  require_data<T>(data, warm.spec(), "lbg-baseline");
  ArtoveqRun<T> run{warm, {}, {}};
  auto lbg = stage2_codebook_init(run.model, data, lbg_for<T>(plan, rate));
  run.codebook = NestedCodebook<T>(warm.spec().segment_dim, rate, lbg.codewords);
  run.lbg_codewords = std::move(lbg.codewords);

  Sgd<T> opt(plan.learning_rate, plan.momentum);
  opt.set_slots(model_slots(run.model.decoder_parameters()));
  auto rng = make_stream(plan.seed, streams::baseline_batches);
  const auto levels = uniform_levels(warm.spec().segments, rate);
  const std::size_t epochs = static_cast<std::size_t>(std::llround(
      plan.lbg_finetune_fraction *
      static_cast<double>(plan.epochs_per_level * plan.max_level)));

  // Encoder and codebook are frozen: quantize once, train the decoder only.
  const auto all = data.all_indices();
  const auto xe_all = run.model.encode_batch(data.inputs<T>(all));
  const auto tables = LevelTables<T>::nested(run.codebook);
  const auto idx = assign_segments<T>(xe_all.values(), all.size(),
                                      warm.spec().segment_dim, levels, tables);
  const std::size_t width = warm.spec().feature_dim();
  const std::size_t d = warm.spec().segment_dim;
  std::vector<T> zq(all.size() * width);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto cw = run.codebook.codewords()[static_cast<std::size_t>(idx[i])];
    std::copy(cw.begin(), cw.end(), zq.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  run_epochs<T>(
      "lbg-finetune", rate, epochs, opt, data.size(), plan.batch_size, rng,
      [&](std::span<const std::size_t> b) {
        grad::Tensor<T> z(grad::Shape{b.size(), width});
        for (std::size_t r = 0; r < b.size(); ++r) {
          std::copy_n(zq.begin() + static_cast<std::ptrdiff_t>(b[r] * width), width,
                      z.row(r).begin());
        }
        LossBreakdown<T> lb;
        lb.total = grad::cross_entropy<T>(
            run.model.decode_graph(grad::Var<T>::constant(std::move(z))),
            data.labels(b));
        lb.task = lb.total.value().item();
        lb.decoder_passes = 1;
        return lb;
      },
      {}, log);
  return run;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
void score_logits(const grad::Tensor<T>& logits,
                  std::span<const std::int32_t> labels, EvalResult& acc,
                  double& loss_sum) {
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto row = logits.row(r);
    const std::size_t pred = argmax<T>(row);
    double mx = -INFINITY;
    for (auto v : row) mx = std::max(mx, static_cast<double>(v));
    double s = 0.0;
    for (auto v : row) s += std::exp(static_cast<double>(v) - mx);
    loss_sum += std::log(s) + mx -
                static_cast<double>(row[static_cast<std::size_t>(labels[r])]);
    acc.correct.push_back(pred == static_cast<std::size_t>(labels[r]) ? 1 : 0);
  }
}

}  // namespace

template <typename T>
EvalResult evaluate_with(
    const TaskModel<T>& model, const Dataset& data,
    const std::function<grad::Tensor<T>(const grad::Tensor<T>&)>& features) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (data.input_dim() != model.spec().input_dim) {
    throw std::invalid_argument("evaluate: dataset does not match the model");
  }
  EvalResult out;
  double loss_sum = 0.0;
  const auto all = data.all_indices();
  constexpr std::size_t chunk = 512;
  for (std::size_t b = 0; b < all.size(); b += chunk) {
    const std::span<const std::size_t> idx(all.data() + b,
                                           std::min(chunk, all.size() - b));
    const auto z = features(model.encode_batch(data.inputs<T>(idx)));
    const auto labels = data.labels(idx);
    score_logits<T>(model.decode_batch(z), labels, out, loss_sum);
  }
  const double n = static_cast<double>(data.size());
  out.accuracy =
      static_cast<double>(std::accumulate(out.correct.begin(), out.correct.end(), 0u)) / n;
  out.mean_loss = loss_sum / n;
  return out;
}

template <typename T>
EvalResult evaluate(const TaskModel<T>& model, const LevelTables<T>& tables,
                    std::span<const std::size_t> levels, const Dataset& data) {
  const auto& spec = model.spec();
  if (levels.size() != spec.segments) {
    throw std::invalid_argument("evaluate: " + std::to_string(levels.size()) +
                                " levels for " + std::to_string(spec.segments) +
                                " segments");
  }
  return evaluate_with<T>(model, data, [&](const grad::Tensor<T>& xe) {
    const std::size_t n = xe.rows();
    const std::size_t d = spec.segment_dim;
    const auto idx = assign_segments<T>(xe.values(), n, d, levels, tables);
    grad::Tensor<T> z(xe.shape());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto cw =
          tables.at(levels[i % spec.segments])[static_cast<std::size_t>(idx[i])];
      std::copy(cw.begin(), cw.end(), z.values().begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return z;
  });
}

template <typename T>
EvalResult evaluate_unquantized(const TaskModel<T>& model,
                                const Dataset& data) {
  return evaluate_with<T>(model, data, [](const grad::Tensor<T>& xe) { return xe; });
}

#define ARTOVEQ_INSTANTIATE_TRAINING(T)                                        \
  template class Sgd<T>;                                                       \
  template struct GraphCodebook<T>;                                            \
  template LossBreakdown<T> batch_loss(                                        \
      const TaskModel<T>&, const GraphCodebook<T>&, const Dataset&,            \
      std::span<const std::size_t>, std::span<const QuantizedPass>,            \
      const grad::Var<T>&, double);                                            \
  template LossBreakdown<T> level_loss(                                        \
      const TaskModel<T>&, const NestedCodebook<T>&, const Dataset&,           \
      std::span<const std::size_t>, std::size_t, const LossConfig&,            \
      const PrefixSnapshot<T>&);                                               \
  template grad::Var<T> overall_loss(                                          \
      const TaskModel<T>&, const NestedCodebook<T>&, const Dataset&,           \
      std::span<const std::size_t>, const LossConfig&,                         \
      std::span<const PrefixSnapshot<T>>);                                     \
  template void stage1_warmstart(TaskModel<T>&, const Dataset&,                \
                                 const TrainPlan&, const EpochLogger&);        \
  template LbgResult<T> stage2_codebook_init(                                  \
      const TaskModel<T>&, const Dataset&, const LbgConfig&);                  \
  template std::vector<T> encode_subvectors(const TaskModel<T>&,               \
                                            const Dataset&);                   \
  template void stage3_joint_adaptation(                                       \
      TaskModel<T>&, NestedCodebook<T>&, std::span<const T>, const Dataset&,   \
      const TrainPlan&, const EpochLogger&);                                   \
  template void stage3_mixed_resolution(                                       \
      TaskModel<T>&, NestedCodebook<T>&, std::span<const T>, const Dataset&,   \
      const TrainPlan&, const EpochLogger&);                                   \
  template ProgressiveCodebook<T> adapt_progressive(                           \
      TaskModel<T>&, const Dataset&, const TrainPlan&, const EpochLogger&);    \
  template ArtoveqRun<T> train_artoveq(const NetworkSpec&, const Dataset&,     \
                                       const TrainPlan&, const EpochLogger&);  \
  template ProgressiveRun<T> train_progressive(                                \
      const NetworkSpec&, const Dataset&, const TrainPlan&,                    \
      const EpochLogger&);                                                     \
  template ArtoveqRun<T> train_fixed_rate(const TaskModel<T>&, const Dataset&, \
                                          const TrainPlan&, std::size_t,       \
                                          const EpochLogger&);                 \
  template ArtoveqRun<T> train_lbg_baseline(                                   \
      const TaskModel<T>&, const Dataset&, const TrainPlan&, std::size_t,      \
      const EpochLogger&);                                                     \
  template EvalResult evaluate(const TaskModel<T>&, const LevelTables<T>&,     \
                               std::span<const std::size_t>, const Dataset&);  \
  template EvalResult evaluate_unquantized(const TaskModel<T>&, const Dataset&); \
  template EvalResult evaluate_with(                                           \
      const TaskModel<T>&, const Dataset&,                                     \
      const std::function<grad::Tensor<T>(const grad::Tensor<T>&)>&);

ARTOVEQ_INSTANTIATE_TRAINING(float)
ARTOVEQ_INSTANTIATE_TRAINING(double)

#undef ARTOVEQ_INSTANTIATE_TRAINING

}  // namespace artoveq
