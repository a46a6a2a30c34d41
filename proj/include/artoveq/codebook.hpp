#pragma once

// Codebook structures: the nested single codebook whose prefixes serve every
// rate, the successive-refinement codebook built from per-level difference
// pairs, and LBG fitting by binary splitting.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "artoveq/gradcore.hpp"

namespace artoveq {

// Read-only window over `count` consecutive codewords of dimension `dim`.
template <typename T>
class CodewordView {
 public:
  CodewordView() = default;
  CodewordView(std::span<const T> data, std::size_t dim)
      : data_(data), dim_(dim) {}

  std::size_t size() const noexcept { return dim_ ? data_.size() / dim_ : 0; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const T> data() const noexcept { return data_; }
  std::span<const T> operator[](std::size_t k) const {
    return data_.subspan(k * dim_, dim_);
  }

 private:
  std::span<const T> data_;
  std::size_t dim_ = 0;
};

// One ordered list of 2^max_level codewords; level l uses the first 2^l.
template <typename T>
class NestedCodebook {
 public:
  NestedCodebook() = default;
  NestedCodebook(std::size_t dim, std::size_t max_level);
  NestedCodebook(std::size_t dim, std::size_t max_level,
                 std::vector<T> codewords);
  // Copies own fresh storage; the trainable leaf is never shared.
  NestedCodebook(const NestedCodebook& other);
  NestedCodebook& operator=(const NestedCodebook& other);
  NestedCodebook(NestedCodebook&&) noexcept = default;
  NestedCodebook& operator=(NestedCodebook&&) noexcept = default;

  std::size_t dim() const noexcept { return dim_; }
  std::size_t max_level() const noexcept { return max_level_; }
  std::size_t size() const noexcept { return std::size_t{1} << max_level_; }

  // First 2^level codewords, viewing the live storage.
  CodewordView<T> sub_codebook(std::size_t level) const;
  CodewordView<T> codewords() const { return sub_codebook(max_level_); }

  void set_codeword(std::size_t k, std::span<const T> values);

  // Trainable [S, dim] leaf.
  grad::Var<T>& parameter() noexcept { return param_; }
  const grad::Var<T>& parameter() const noexcept { return param_; }

  template <typename U>
  NestedCodebook<U> cast() const {
    const auto& v = param_.value().storage();
    return NestedCodebook<U>(dim_, max_level_, std::vector<U>(v.begin(), v.end()));
  }

 private:
  std::size_t dim_ = 0;
  std::size_t max_level_ = 0;
  grad::Var<T> param_;
};

// Codeword address b_1 ... b_l, most significant (coarsest) bit first.
class BitString {
 public:
  BitString() = default;
  explicit BitString(std::vector<std::uint8_t> bits);
  static BitString parse(const std::string& text);
  static BitString from_index(std::size_t index, std::size_t length);

  std::size_t length() const noexcept { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  std::size_t index() const;
  BitString prefix(std::size_t length) const;
  std::string str() const;

  friend bool operator==(const BitString&, const BitString&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

BitString refine_index(const BitString& prefix, std::uint8_t next_bit);

// Per-level difference pairs; level-l codewords are all sums of one vector
// from each of the first l pairs.
template <typename T>
class ProgressiveCodebook {
 public:
  ProgressiveCodebook() = default;
  ProgressiveCodebook(std::size_t dim, std::size_t max_level);
  // pairs[l-1] holds 2*dim values: first e1 then e2 of level l.
  ProgressiveCodebook(std::size_t dim, std::vector<std::vector<T>> pairs);
  ProgressiveCodebook(const ProgressiveCodebook& other);
  ProgressiveCodebook& operator=(const ProgressiveCodebook& other);
  ProgressiveCodebook(ProgressiveCodebook&&) noexcept = default;
  ProgressiveCodebook& operator=(ProgressiveCodebook&&) noexcept = default;

  std::size_t dim() const noexcept { return dim_; }
  std::size_t max_level() const noexcept { return pairs_.size(); }

  // Trainable [2, dim] leaf for level (1-based).
  grad::Var<T>& pair(std::size_t level);
  const grad::Var<T>& pair(std::size_t level) const;
  std::span<const T> difference(std::size_t level, std::uint8_t bit) const;

  // Uniform in [-0.5/sqrt(dim), 0.5/sqrt(dim)].
  void randomize(std::size_t level, std::mt19937_64& rng);

  // All 2^level codewords via Q_l = Q_{l-1} + {e1, e2}, Q_0 = {0};
  // row index is the bit string read as a binary number.
  grad::Tensor<T> materialize(std::size_t level) const;
  // Direct sum over the bits of `address`.
  std::vector<T> codeword(const BitString& address) const;

  template <typename U>
  ProgressiveCodebook<U> cast() const {
    std::vector<std::vector<U>> out;
    for (const auto& p : pairs_) {
      const auto& v = p.value().storage();
      out.emplace_back(v.begin(), v.end());
    }
    return ProgressiveCodebook<U>(dim_, std::move(out));
  }

 private:
  void check_level(std::size_t level, const char* op) const;

  std::size_t dim_ = 0;
  std::vector<grad::Var<T>> pairs_;
};

struct LbgConfig {
  std::size_t target_size = 2;
  double split_perturbation = 0.01;
  std::size_t max_iterations = 100;
  double convergence_threshold = 1e-5;

  void validate() const;
};

struct LbgStage {
  std::size_t codebook_size = 0;
  // Mean squared distortion after each assignment step.
  std::vector<double> distortion;
};

template <typename T>
struct LbgResult {
  std::size_t dim = 0;
  std::vector<T> codewords;
  std::vector<LbgStage> history;
  // Mean squared distance to the nearest codeword.
  double mean_squared_distortion = 0.0;
  // Mean (unsquared) l2 distance to the nearest codeword.
  double mean_distance = 0.0;

  CodewordView<T> view() const { return CodewordView<T>(codewords, dim); }
};

// LBG by binary splitting from the global mean. Each centroid c splits into
// c(1+eps) and c(1-eps); after the doubled codebook converges, the child
// nearer its parent takes the parent's slot and the other goes to slot
// parent + old size. The first 2^l codewords therefore track the converged
// 2^l-codeword stage.
template <typename T>
LbgResult<T> lbg_fit(std::span<const T> points, std::size_t dim,
                     const LbgConfig& cfg);

// Mean l2 distance of each point to its nearest codeword.
template <typename T>
double mean_nearest_distance(std::span<const T> points, std::size_t dim,
                             CodewordView<T> codewords);

bool is_power_of_two(std::size_t n);
std::size_t log2_exact(std::size_t n);

}  // namespace artoveq
