#include "artoveq/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "artoveq/kernels.hpp"

namespace artoveq {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t log2_exact(std::size_t n) {
  if (!is_power_of_two(n)) {
    throw std::invalid_argument(std::to_string(n) + " is not a power of two");
  }
  std::size_t level = 0;
  while ((std::size_t{1} << level) < n) ++level;
  return level;
}

// ---------------------------------------------------------------------------
// NestedCodebook

template <typename T>
NestedCodebook<T>::NestedCodebook(std::size_t dim, std::size_t max_level)
    : NestedCodebook(dim, max_level,
                     std::vector<T>((std::size_t{1} << max_level) * dim)) {}

template <typename T>
NestedCodebook<T>::NestedCodebook(std::size_t dim, std::size_t max_level,
                                  std::vector<T> codewords)
    : dim_(dim), max_level_(max_level) {
  if (dim == 0) throw std::invalid_argument("codebook: dim must be positive");
  if (max_level == 0 || max_level > 24) {
    throw std::invalid_argument("codebook: max_level must be in [1, 24]");
  }
  const std::size_t count = std::size_t{1} << max_level;
  if (codewords.size() != count * dim) {
    throw std::invalid_argument(
        "codebook: expected " + std::to_string(count) + " codewords of dim " +
        std::to_string(dim) + ", got " + std::to_string(codewords.size()) +
        " values");
  }
  param_ = grad::Var<T>::parameter(
      grad::Tensor<T>(grad::Shape{count, dim}, std::move(codewords)));
}

template <typename T>
NestedCodebook<T>::NestedCodebook(const NestedCodebook& other)
    : dim_(other.dim_), max_level_(other.max_level_) {
  if (other.param_) param_ = grad::Var<T>::parameter(other.param_.value());
}

template <typename T>
NestedCodebook<T>& NestedCodebook<T>::operator=(const NestedCodebook& other) {
  if (this != &other) {
    NestedCodebook copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
CodewordView<T> NestedCodebook<T>::sub_codebook(std::size_t level) const {
  if (level < 1 || level > max_level_) {
    throw std::out_of_range("sub_codebook: level " + std::to_string(level) +
                            " outside [1, " + std::to_string(max_level_) +
                            "]");
  }
  const std::size_t count = std::size_t{1} << level;
  return CodewordView<T>(param_.value().values().subspan(0, count * dim_),
                         dim_);
}

template <typename T>
void NestedCodebook<T>::set_codeword(std::size_t k,
                                     std::span<const T> values) {
  if (k >= size() || values.size() != dim_) {
    throw std::out_of_range("set_codeword: index or dimension out of range");
  }
  std::copy(values.begin(), values.end(),
            param_.mutable_value().row(k).begin());
}

// ---------------------------------------------------------------------------
// BitString

BitString::BitString(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw std::invalid_argument("BitString: bits must be 0 or 1");
  }
}

BitString BitString::parse(const std::string& text) {
  std::vector<std::uint8_t> bits;
  bits.reserve(text.size());
  for (char c : text) {
    if (c != '0' && c != '1') {
      throw std::invalid_argument("BitString: invalid character in '" + text +
                                  "'");
    }
    bits.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  return BitString(std::move(bits));
}

BitString BitString::from_index(std::size_t index, std::size_t length) {
  std::vector<std::uint8_t> bits(length);
  for (std::size_t j = 0; j < length; ++j) {
    bits[length - 1 - j] = static_cast<std::uint8_t>((index >> j) & 1u);
  }
  return BitString(std::move(bits));
}

std::size_t BitString::index() const {
  std::size_t idx = 0;
  for (auto b : bits_) idx = (idx << 1) | b;
  return idx;
}

BitString BitString::prefix(std::size_t length) const {
  if (length > bits_.size()) {
    throw std::out_of_range("BitString::prefix: too long");
  }
  return BitString(std::vector<std::uint8_t>(bits_.begin(),
                                              bits_.begin() + length));
}

std::string BitString::str() const {
  std::string s;
  s.reserve(bits_.size());
  for (auto b : bits_) s.push_back(static_cast<char>('0' + b));
  return s;
}

BitString refine_index(const BitString& prefix, std::uint8_t next_bit) {
  std::vector<std::uint8_t> bits;
  bits.reserve(prefix.length() + 1);
  for (std::size_t i = 0; i < prefix.length(); ++i) bits.push_back(prefix[i]);
  bits.push_back(next_bit);
  return BitString(std::move(bits));
}

// ---------------------------------------------------------------------------
// ProgressiveCodebook

template <typename T>
ProgressiveCodebook<T>::ProgressiveCodebook(std::size_t dim,
                                            std::size_t max_level)
    : ProgressiveCodebook(
          dim, std::vector<std::vector<T>>(max_level,
                                           std::vector<T>(2 * dim))) {}

template <typename T>
ProgressiveCodebook<T>::ProgressiveCodebook(std::size_t dim,
                                            std::vector<std::vector<T>> pairs)
    : dim_(dim) {
  if (dim == 0) throw std::invalid_argument("codebook: dim must be positive");
  if (pairs.empty() || pairs.size() > 24) {
    throw std::invalid_argument("codebook: max_level must be in [1, 24]");
  }
  for (auto& p : pairs) {
    if (p.size() != 2 * dim) {
      throw std::invalid_argument("codebook: difference pair needs " +
                                  std::to_string(2 * dim) + " values");
    }
    pairs_.push_back(grad::Var<T>::parameter(
        grad::Tensor<T>(grad::Shape{2, dim}, std::move(p))));
  }
}

template <typename T>
ProgressiveCodebook<T>::ProgressiveCodebook(const ProgressiveCodebook& other)
    : dim_(other.dim_) {
  for (const auto& p : other.pairs_) {
    pairs_.push_back(grad::Var<T>::parameter(p.value()));
  }
}

template <typename T>
ProgressiveCodebook<T>& ProgressiveCodebook<T>::operator=(
    const ProgressiveCodebook& other) {
  if (this != &other) {
    ProgressiveCodebook copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
void ProgressiveCodebook<T>::check_level(std::size_t level,
                                         const char* op) const {
  if (level < 1 || level > pairs_.size()) {
    throw std::out_of_range(std::string(op) + ": level " +
                            std::to_string(level) + " outside [1, " +
                            std::to_string(pairs_.size()) + "]");
  }
}

template <typename T>
grad::Var<T>& ProgressiveCodebook<T>::pair(std::size_t level) {
  check_level(level, "pair");
  return pairs_[level - 1];
}

template <typename T>
const grad::Var<T>& ProgressiveCodebook<T>::pair(std::size_t level) const {
  check_level(level, "pair");
  return pairs_[level - 1];
}

template <typename T>
std::span<const T> ProgressiveCodebook<T>::difference(std::size_t level,
                                                      std::uint8_t bit) const {
  check_level(level, "difference");
  return pairs_[level - 1].value().row(bit ? 1 : 0);
}

template <typename T>
void ProgressiveCodebook<T>::randomize(std::size_t level,
                                       std::mt19937_64& rng) {
  check_level(level, "randomize");
  const double bound = 0.5 / std::sqrt(static_cast<double>(dim_));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : pairs_[level - 1].mutable_value().storage()) {
    v = static_cast<T>(dist(rng));
  }
}

template <typename T>
grad::Tensor<T> ProgressiveCodebook<T>::materialize(std::size_t level) const {
  check_level(level, "materialize");
  std::vector<T> prev(dim_, T{0});
  for (std::size_t j = 1; j <= level; ++j) {
    const std::size_t count = std::size_t{1} << j;
    std::vector<T> next(count * dim_);
    for (std::size_t i = 0; i < count; ++i) {
      const T* parent = prev.data() + (i >> 1) * dim_;
      const auto diff = difference(j, static_cast<std::uint8_t>(i & 1u));
      for (std::size_t c = 0; c < dim_; ++c) {
        next[i * dim_ + c] = parent[c] + diff[c];
      }
    }
    prev = std::move(next);
  }
  const std::size_t count = std::size_t{1} << level;
  return grad::Tensor<T>(grad::Shape{count, dim_}, std::move(prev));
}

template <typename T>
std::vector<T> ProgressiveCodebook<T>::codeword(
    const BitString& address) const {
  if (address.length() > pairs_.size()) {
    throw std::out_of_range("codeword: address longer than max_level");
  }
  std::vector<T> acc(dim_, T{0});
  for (std::size_t j = 0; j < address.length(); ++j) {
    const auto diff = difference(j + 1, address[j]);
    for (std::size_t c = 0; c < dim_; ++c) acc[c] = acc[c] + diff[c];
  }
  return acc;
}

// ---------------------------------------------------------------------------
// LBG

void LbgConfig::validate() const {
  if (!is_power_of_two(target_size)) {
    throw std::invalid_argument("lbg: target_size " +
                                std::to_string(target_size) +
                                " is not a power of two");
  }
  if (!(split_perturbation > 0.0)) {
    throw std::invalid_argument("lbg: split_perturbation must be positive");
  }
  if (max_iterations == 0) {
    throw std::invalid_argument("lbg: max_iterations must be positive");
  }
  if (!(convergence_threshold > 0.0)) {
    throw std::invalid_argument("lbg: convergence_threshold must be positive");
  }
}

namespace {

// One Lloyd stage on a fixed codebook size; returns per-iteration distortion.
std::vector<double> lloyd_stage(const std::vector<double>& points,
                                std::size_t n, std::size_t dim,
                                std::vector<double>& centroids,
                                const LbgConfig& cfg) {
  const std::size_t k = centroids.size() / dim;
  std::vector<std::int32_t> owner(n);
  std::vector<double> dist(n);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);
  std::vector<double> history;

  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    kernels::assign_nearest(points.data(), n, dim, dim, centroids.data(), k,
                            owner.data(), 1, dist.data());
    double total = 0.0;
    for (double d : dist) total += d;
    const double distortion = total / static_cast<double>(n);
    history.push_back(distortion);

    if (distortion == 0.0) break;
    if (history.size() >= 2) {
      const double prev = history[history.size() - 2];
      if ((prev - distortion) / prev < cfg.convergence_threshold) break;
    }
    if (it + 1 == cfg.max_iterations) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(owner[i]);
      ++counts[c];
      for (std::size_t j = 0; j < dim; ++j) {
        sums[c * dim + j] += points[i * dim + j];
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed at the worst-served point; ties go to the lowest index.
        std::size_t worst = 0;
        for (std::size_t i = 1; i < n; ++i) {
          if (dist[i] > dist[worst]) worst = i;
        }
        for (std::size_t j = 0; j < dim; ++j) {
          centroids[c * dim + j] = points[worst * dim + j];
        }
        dist[worst] = 0.0;
        continue;
      }
      const double inv = 1.0 / static_cast<double>(counts[c]);
      for (std::size_t j = 0; j < dim; ++j) {
        centroids[c * dim + j] = sums[c * dim + j] * inv;
      }
    }
  }
  return history;
}

}  // namespace

template <typename T>
double mean_nearest_distance(std::span<const T> points, std::size_t dim,
                             CodewordView<T> codewords) {
  if (dim == 0 || points.size() % dim != 0 || points.empty()) {
    throw std::invalid_argument("mean_nearest_distance: bad point set");
  }
  const std::size_t n = points.size() / dim;
  std::vector<std::int32_t> owner(n);
  std::vector<double> dist(n);
  kernels::assign_nearest(points.data(), n, dim, dim, codewords.data().data(),
                          codewords.size(), owner.data(), 1, dist.data());
  double total = 0.0;
  for (double d : dist) total += std::sqrt(d);
  return total / static_cast<double>(n);
}

template <typename T>
LbgResult<T> lbg_fit(std::span<const T> points, std::size_t dim,
                     const LbgConfig& cfg) {
  cfg.validate();
  if (dim == 0 || points.size() % dim != 0) {
    throw std::invalid_argument("lbg: point buffer is not a multiple of dim");
  }
  const std::size_t n = points.size() / dim;
  if (n < cfg.target_size) {
    throw std::invalid_argument("lbg: " + std::to_string(n) +
                                " points cannot support " +
                                std::to_string(cfg.target_size) +
                                " codewords");
  }
  std::vector<double> pts(points.begin(), points.end());
  for (double v : pts) {
    if (!std::isfinite(v)) throw std::invalid_argument("lbg: non-finite input");
  }

  std::vector<double> centroids(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) centroids[j] += pts[i * dim + j];
  }
  for (auto& c : centroids) c /= static_cast<double>(n);

  LbgResult<T> result;
  result.dim = dim;
  {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += kernels::squared_distance(pts.data() + i * dim,
                                         centroids.data(), dim);
    }
    result.history.push_back({1, {total / static_cast<double>(n)}});
  }

  const double eps = cfg.split_perturbation;
  while (centroids.size() / dim < cfg.target_size) {
    const std::size_t k = centroids.size() / dim;
    std::vector<double> split(2 * k * dim);
    for (std::size_t i = 0; i < k * dim; ++i) {
      split[i] = centroids[i] * (1.0 + eps);
      split[k * dim + i] = centroids[i] * (1.0 - eps);
    }
    const std::vector<double> parents = std::move(centroids);
    centroids = std::move(split);
    result.history.push_back(
        {2 * k, lloyd_stage(pts, n, dim, centroids, cfg)});
    // Keep in the parent's slot whichever child ended nearer the parent, so
    // every prefix stays close to the coarser codebook it refines.
    for (std::size_t p = 0; p < k; ++p) {
      double* first = centroids.data() + p * dim;
      double* second = centroids.data() + (p + k) * dim;
      const double* parent = parents.data() + p * dim;
      if (kernels::squared_distance(second, parent, dim) <
          kernels::squared_distance(first, parent, dim)) {
        std::swap_ranges(first, first + dim, second);
      }
    }
  }

  result.codewords.assign(centroids.begin(), centroids.end());
  result.mean_squared_distortion = result.history.back().distortion.back();
  result.mean_distance = mean_nearest_distance<T>(points, dim, result.view());
  return result;
}

template class NestedCodebook<float>;
template class NestedCodebook<double>;
template class ProgressiveCodebook<float>;
template class ProgressiveCodebook<double>;
template LbgResult<float> lbg_fit(std::span<const float>, std::size_t,
                                  const LbgConfig&);
template LbgResult<double> lbg_fit(std::span<const double>, std::size_t,
                                   const LbgConfig&);
template double mean_nearest_distance(std::span<const float>, std::size_t,
                                      CodewordView<float>);
template double mean_nearest_distance(std::span<const double>, std::size_t,
                                      CodewordView<double>);

}  // namespace artoveq
