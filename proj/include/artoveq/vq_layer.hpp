#pragma once

// Sub-vector quantization against (sub-)codebooks, the straight-through
// pass, the codebook/commitment loss pair and the prefix drift penalty.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "artoveq/codebook.hpp"
#include "artoveq/gradcore.hpp"

namespace artoveq {

// Encoder output split into contiguous segments of length `dim`.
template <typename T>
class FeatureBlock {
 public:
  FeatureBlock() = default;
  FeatureBlock(std::vector<T> features, std::size_t dim);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t segment_count() const noexcept {
    return dim_ ? features_.size() / dim_ : 0;
  }
  std::span<const T> segment(std::size_t m) const {
    return std::span<const T>(features_).subspan(m * dim_, dim_);
  }
  // The encoder output the segments were split from.
  const std::vector<T>& source() const noexcept { return features_; }

 private:
  std::vector<T> features_;
  std::size_t dim_ = 0;
};

template <typename T>
struct QuantizationResult {
  std::size_t dim = 0;
  std::vector<std::int32_t> indices;
  // Concatenated z_{t,m}.
  std::vector<T> quantized;
  std::size_t bits_used = 0;
  std::vector<std::size_t> per_segment_levels;

  std::span<const T> segment(std::size_t m) const {
    return std::span<const T>(quantized).subspan(m * dim, dim);
  }
};

struct Nearest {
  std::size_t index = 0;
  double distance = 0.0;
};

template <typename T>
Nearest nearest_codeword(std::span<const T> x, CodewordView<T> codewords);

// Candidate codeword table for every level 1..max_level. Nested tables view
// the live codebook; progressive tables own materialized copies.
template <typename T>
class LevelTables {
 public:
  LevelTables() = default;
  LevelTables(const LevelTables&) = delete;
  LevelTables& operator=(const LevelTables&) = delete;
  LevelTables(LevelTables&&) noexcept = default;
  LevelTables& operator=(LevelTables&&) noexcept = default;

  static LevelTables nested(const NestedCodebook<T>& codebook);
  static LevelTables progressive(const ProgressiveCodebook<T>& codebook);
  // tables[l-1] must hold 2^l rows.
  static LevelTables from_tensors(std::vector<grad::Tensor<T>> tables);

  std::size_t max_level() const noexcept { return views_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  CodewordView<T> at(std::size_t level) const;

 private:
  std::size_t dim_ = 0;
  std::vector<grad::Tensor<T>> owned_;
  std::vector<CodewordView<T>> views_;
};

// Nearest-codeword indices for a [rows, segments*dim] feature matrix, where
// segment m is quantized against the level levels[m] table. Output is
// row-major [rows, segments].
template <typename T>
std::vector<std::int32_t> assign_segments(std::span<const T> features,
                                          std::size_t rows, std::size_t dim,
                                          std::span<const std::size_t> levels,
                                          const LevelTables<T>& tables);

template <typename T>
QuantizationResult<T> quantize_block(const FeatureBlock<T>& block,
                                     const LevelTables<T>& tables,
                                     std::span<const std::size_t> levels);
template <typename T>
QuantizationResult<T> quantize_block(const FeatureBlock<T>& block,
                                     const NestedCodebook<T>& codebook,
                                     std::span<const std::size_t> levels);
template <typename T>
QuantizationResult<T> quantize_block(const FeatureBlock<T>& block,
                                     const ProgressiveCodebook<T>& codebook,
                                     std::span<const std::size_t> levels);

struct LossConfig {
  std::vector<double> beta_per_level;
  // eta_per_level[0] is never used: level 1 has no previous prefix.
  std::vector<double> eta_per_level;

  static LossConfig defaults(std::size_t max_level, double beta = 0.25,
                             double eta = 1.0);
  void validate(std::size_t max_level) const;
};

// Forward value z, gradient handed to x unchanged.
template <typename T>
grad::Var<T> straight_through(const grad::Var<T>& x, const grad::Tensor<T>& z);

template <typename T>
struct VqTerms {
  grad::Var<T> codebook_term;    // ||sg(x) - z||^2
  grad::Var<T> commitment_term;  // beta ||x - sg(z)||^2
  grad::Var<T> total() const { return grad::add(codebook_term, commitment_term); }
};

template <typename T>
VqTerms<T> vq_loss_terms(const grad::Var<T>& x, const grad::Var<T>& z,
                         double beta);

// Frozen copy of the first `rows` codewords.
template <typename T>
struct PrefixSnapshot {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<T> values;
};

template <typename T>
PrefixSnapshot<T> snapshot_prefix(const NestedCodebook<T>& codebook,
                                  std::size_t rows);

// Sum over the snapshot rows of ||current_k - snapshot_k||^2; gradient goes
// to the live codebook only.
template <typename T>
grad::Var<T> drift_penalty(const grad::Var<T>& codebook,
                           const PrefixSnapshot<T>& snapshot);

// Differentiable level-l progressive codebook [2^l, dim] built from the pair
// variables by the same recursion as ProgressiveCodebook::materialize.
template <typename T>
grad::Var<T> materialize_graph(std::span<const grad::Var<T>> pairs,
                               std::size_t level);

}  // namespace artoveq
