#include "artoveq/vq_layer.hpp"

#include <stdexcept>
#include <string>

#include "artoveq/kernels.hpp"

namespace artoveq {

template <typename T>
FeatureBlock<T>::FeatureBlock(std::vector<T> features, std::size_t dim)
    : features_(std::move(features)), dim_(dim) {
  if (dim == 0 || features_.empty() || features_.size() % dim != 0) {
    throw std::invalid_argument(
        "FeatureBlock: " + std::to_string(features_.size()) +
        " features cannot be split into segments of " + std::to_string(dim));
  }
}

template <typename T>
Nearest nearest_codeword(std::span<const T> x, CodewordView<T> codewords) {
  if (codewords.size() == 0) {
    throw std::invalid_argument("nearest_codeword: empty codebook");
  }
  if (x.size() != codewords.dim()) {
    throw std::invalid_argument("nearest_codeword: vector of dim " +
                                std::to_string(x.size()) +
                                " against codewords of dim " +
                                std::to_string(codewords.dim()));
  }
  Nearest out;
  out.index = kernels::nearest_index(x.data(), codewords.data().data(),
                                     codewords.size(), codewords.dim(),
                                     &out.distance);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
LevelTables<T> LevelTables<T>::nested(const NestedCodebook<T>& codebook) {
  LevelTables out;
  out.dim_ = codebook.dim();
  for (std::size_t l = 1; l <= codebook.max_level(); ++l) {
    out.views_.push_back(codebook.sub_codebook(l));
  }
  return out;
}

template <typename T>
LevelTables<T> LevelTables<T>::progressive(
    const ProgressiveCodebook<T>& codebook) {
  std::vector<grad::Tensor<T>> tables;
  for (std::size_t l = 1; l <= codebook.max_level(); ++l) {
    tables.push_back(codebook.materialize(l));
  }
  return from_tensors(std::move(tables));
}

template <typename T>
LevelTables<T> LevelTables<T>::from_tensors(
    std::vector<grad::Tensor<T>> tables) {
  LevelTables out;
  if (tables.empty()) throw std::invalid_argument("LevelTables: no tables");
  out.dim_ = tables.front().cols();
  out.owned_ = std::move(tables);
  for (std::size_t l = 1; l <= out.owned_.size(); ++l) {
    const auto& t = out.owned_[l - 1];
    if (t.rows() != (std::size_t{1} << l) || t.cols() != out.dim_) {
      throw std::invalid_argument("LevelTables: level " + std::to_string(l) +
                                  " table has shape " +
                                  grad::to_string(t.shape()));
    }
    out.views_.emplace_back(t.values(), out.dim_);
  }
  return out;
}

template <typename T>
CodewordView<T> LevelTables<T>::at(std::size_t level) const {
  if (level < 1 || level > views_.size()) {
    throw std::out_of_range("quantization level " + std::to_string(level) +
                            " outside [1, " + std::to_string(views_.size()) +
                            "]");
  }
  return views_[level - 1];
}

template <typename T>
std::vector<std::int32_t> assign_segments(std::span<const T> features,
                                          std::size_t rows, std::size_t dim,
                                          std::span<const std::size_t> levels,
                                          const LevelTables<T>& tables) {
  const std::size_t segments = levels.size();
  if (dim != tables.dim()) {
    throw std::invalid_argument("assign_segments: dim mismatch");
  }
  if (features.size() != rows * segments * dim) {
    throw std::invalid_argument(
        "assign_segments: " + std::to_string(features.size()) +
        " features for " + std::to_string(rows) + " rows of " +
        std::to_string(segments) + "x" + std::to_string(dim));
  }
  std::vector<std::int32_t> out(rows * segments);
  for (std::size_t m = 0; m < segments; ++m) {
    const auto table = tables.at(levels[m]);
    kernels::assign_nearest(features.data() + m * dim, rows, segments * dim,
                            dim, table.data().data(), table.size(),
                            out.data() + m, segments);
  }
  return out;
}

template <typename T>
QuantizationResult<T> quantize_block(const FeatureBlock<T>& block,
                                     const LevelTables<T>& tables,
                                     std::span<const std::size_t> levels) {
  if (levels.size() != block.segment_count()) {
    throw std::invalid_argument("quantize_block: " +
                                std::to_string(levels.size()) +
                                " levels for " +
                                std::to_string(block.segment_count()) +
                                " segments");
  }
  QuantizationResult<T> res;
  res.dim = block.dim();
  res.indices = assign_segments<T>(block.source(), 1, block.dim(), levels,
                                   tables);
  res.per_segment_levels.assign(levels.begin(), levels.end());
  res.quantized.reserve(block.source().size());
  for (std::size_t m = 0; m < levels.size(); ++m) {
    const auto cw = tables.at(levels[m])[static_cast<std::size_t>(res.indices[m])];
    res.quantized.insert(res.quantized.end(), cw.begin(), cw.end());
    res.bits_used += levels[m];
  }
  return res;
}

template <typename T>
QuantizationResult<T> quantize_block(const FeatureBlock<T>& block,
                                     const NestedCodebook<T>& codebook,
                                     std::span<const std::size_t> levels) {
  return quantize_block(block, LevelTables<T>::nested(codebook), levels);
}

template <typename T>
QuantizationResult<T> quantize_block(const FeatureBlock<T>& block,
                                     const ProgressiveCodebook<T>& codebook,
                                     std::span<const std::size_t> levels) {
  return quantize_block(block, LevelTables<T>::progressive(codebook), levels);
}

// ---------------------------------------------------------------------------

LossConfig LossConfig::defaults(std::size_t max_level, double beta,
                                double eta) {
  LossConfig cfg;
  cfg.beta_per_level.assign(max_level, beta);
  cfg.eta_per_level.assign(max_level, eta);
  if (max_level > 0) cfg.eta_per_level[0] = 0.0;
  return cfg;
}

void LossConfig::validate(std::size_t max_level) const {
  if (beta_per_level.size() != max_level || eta_per_level.size() != max_level) {
    throw std::invalid_argument("loss config: expected " +
                                std::to_string(max_level) +
                                " per-level beta and eta values");
  }
  for (double b : beta_per_level) {
    if (!(b > 0.0)) throw std::invalid_argument("loss config: beta must be > 0");
  }
  for (double e : eta_per_level) {
    if (!(e >= 0.0)) {
      throw std::invalid_argument("loss config: eta must be >= 0");
    }
  }
}

template <typename T>
grad::Var<T> straight_through(const grad::Var<T>& x, const grad::Tensor<T>& z) {
  return grad::pass_through(x, z);
}

template <typename T>
VqTerms<T> vq_loss_terms(const grad::Var<T>& x, const grad::Var<T>& z,
                         double beta) {
  VqTerms<T> terms;
  terms.codebook_term =
      grad::squared_l2_norm(grad::sub(grad::stop_gradient(x), z));
  terms.commitment_term = grad::scale(
      grad::squared_l2_norm(grad::sub(x, grad::stop_gradient(z))),
      static_cast<T>(beta));
  return terms;
}

template <typename T>
PrefixSnapshot<T> snapshot_prefix(const NestedCodebook<T>& codebook,
                                  std::size_t rows) {
  if (rows > codebook.size()) {
    throw std::out_of_range("snapshot_prefix: more rows than codewords");
  }
  PrefixSnapshot<T> snap;
  snap.rows = rows;
  snap.dim = codebook.dim();
  const auto src = codebook.parameter().value().values().subspan(
      0, rows * codebook.dim());
  snap.values.assign(src.begin(), src.end());
  return snap;
}

template <typename T>
grad::Var<T> drift_penalty(const grad::Var<T>& codebook,
                           const PrefixSnapshot<T>& snapshot) {
  const auto& shape = codebook.shape();
  if (shape.size() != 2 || shape[1] != snapshot.dim ||
      snapshot.rows > shape[0] ||
      snapshot.values.size() != snapshot.rows * snapshot.dim) {
    throw std::invalid_argument(
        "drift_penalty: snapshot of " + std::to_string(snapshot.rows) + "x" +
        std::to_string(snapshot.dim) + " does not fit codebook " +
        grad::to_string(shape));
  }
  if (snapshot.rows == 0) {
    return grad::Var<T>::constant(grad::Tensor<T>::scalar(T{0}));
  }
  const auto current = grad::slice_rows(codebook, 0, snapshot.rows);
  const auto frozen = grad::Var<T>::constant(grad::Tensor<T>(
      grad::Shape{snapshot.rows, snapshot.dim}, snapshot.values));
  return grad::squared_l2_norm(grad::sub(current, frozen));
}

template <typename T>
grad::Var<T> materialize_graph(std::span<const grad::Var<T>> pairs,
                               std::size_t level) {
  if (level < 1 || level > pairs.size()) {
    throw std::out_of_range("materialize_graph: level out of range");
  }
  const std::size_t dim = pairs.front().shape()[1];
  auto table =
      grad::Var<T>::constant(grad::Tensor<T>(grad::Shape{1, dim}, T{0}));
  for (std::size_t j = 1; j <= level; ++j) {
    const std::size_t count = std::size_t{1} << j;
    std::vector<std::int32_t> parent(count);
    std::vector<std::int32_t> bit(count);
    for (std::size_t i = 0; i < count; ++i) {
      parent[i] = static_cast<std::int32_t>(i >> 1);
      bit[i] = static_cast<std::int32_t>(i & 1u);
    }
    table = grad::add(grad::gather_rows<T>(table, parent),
                      grad::gather_rows<T>(pairs[j - 1], bit));
  }
  return table;
}

#define ARTOVEQ_INSTANTIATE_VQ(T)                                              \
  template class FeatureBlock<T>;                                              \
  template class LevelTables<T>;                                               \
  template Nearest nearest_codeword(std::span<const T>, CodewordView<T>);      \
  template std::vector<std::int32_t> assign_segments(                          \
      std::span<const T>, std::size_t, std::size_t,                            \
      std::span<const std::size_t>, const LevelTables<T>&);                    \
  template QuantizationResult<T> quantize_block(                               \
      const FeatureBlock<T>&, const LevelTables<T>&,                           \
      std::span<const std::size_t>);                                           \
  template QuantizationResult<T> quantize_block(                               \
      const FeatureBlock<T>&, const NestedCodebook<T>&,                        \
      std::span<const std::size_t>);                                           \
  template QuantizationResult<T> quantize_block(                               \
      const FeatureBlock<T>&, const ProgressiveCodebook<T>&,                   \
      std::span<const std::size_t>);                                           \
  template grad::Var<T> straight_through(const grad::Var<T>&,                  \
                                         const grad::Tensor<T>&);              \
  template VqTerms<T> vq_loss_terms(const grad::Var<T>&, const grad::Var<T>&,  \
                                    double);                                   \
  template PrefixSnapshot<T> snapshot_prefix(const NestedCodebook<T>&,         \
                                             std::size_t);                     \
  template grad::Var<T> drift_penalty(const grad::Var<T>&,                     \
                                      const PrefixSnapshot<T>&);               \
  template grad::Var<T> materialize_graph(std::span<const grad::Var<T>>,       \
                                          std::size_t);

ARTOVEQ_INSTANTIATE_VQ(float)
ARTOVEQ_INSTANTIATE_VQ(double)

#undef ARTOVEQ_INSTANTIATE_VQ

}  // namespace artoveq
