#pragma once

// Dense inner loops used by the autodiff engine, the quantizer and LBG.
//
// Every kernel exists twice: a plain serial reference and an OpenMP version
// that splits the outermost independent loop across threads. Both versions
// evaluate each output element with the same sequential inner loop, so their
// results are bit-identical and the dispatchers below may pick either one
// without affecting determinism.

#include <cstddef>
#include <cstdint>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace artoveq::kernels {

// Squared Euclidean distance; element differences in T, squares summed in
// double.
template <typename T>
inline double squared_distance(const T* x, const T* y, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double diff = static_cast<double>(x[i] - y[i]);
    acc += diff * diff;
  }
  return acc;
}

// Index of the nearest of `count` codewords; ties go to the lowest index.
template <typename T>
inline std::size_t nearest_index(const T* x, const T* codewords,
                                 std::size_t count, std::size_t dim,
                                 double* best_distance = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < count; ++k) {
    const double dist = squared_distance(x, codewords + k * dim, dim);
    if (dist < best_d) {
      best_d = dist;
      best = k;
    }
  }
  if (best_distance != nullptr) *best_distance = best_d;
  return best;
}

namespace serial {

// c[n,m] = a[n,k] * b[k,m]
template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t n, std::size_t k,
            std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    T* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] = T{0};
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      const T* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[k,m] = a[n,k]^T * b[n,m]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t k,
               std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    T* cp = c + p * m;
    for (std::size_t j = 0; j < m; ++j) cp[j] = T{0};
    for (std::size_t i = 0; i < n; ++i) {
      const T aip = a[i * k + p];
      const T* bi = b + i * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += aip * bi[j];
    }
  }
}

// c[n,k] = a[n,m] * b[k,m]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t n, std::size_t m,
               std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * m;
      T acc{0};
      for (std::size_t j = 0; j < m; ++j) acc += ai[j] * bp[j];
      c[i * k + p] = acc;
    }
  }
}

// For each of n strided points, the nearest of the first `count` codewords.
template <typename T>
void assign_nearest(const T* points, std::size_t n, std::size_t stride,
                    std::size_t dim, const T* codewords, std::size_t count,
                    std::int32_t* out, std::size_t out_stride,
                    double* distances = nullptr) {
  for (std::size_t i = 0; i < n; ++i) {
    double dist = 0.0;
    out[i * out_stride] = static_cast<std::int32_t>(
        nearest_index(points + i * stride, codewords, count, dim, &dist));
    if (distances != nullptr) distances[i * out_stride] = dist;
  }
}

}  // namespace serial

namespace parallel {

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t n, std::size_t k,
            std::size_t m) {
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] = T{0};
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      const T* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t k,
               std::size_t m) {
  const auto rows = static_cast<std::int64_t>(k);
#pragma omp parallel for schedule(static)
  for (std::int64_t pp = 0; pp < rows; ++pp) {
    const auto p = static_cast<std::size_t>(pp);
    T* cp = c + p * m;
    for (std::size_t j = 0; j < m; ++j) cp[j] = T{0};
    for (std::size_t i = 0; i < n; ++i) {
      const T aip = a[i * k + p];
      const T* bi = b + i * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += aip * bi[j];
    }
  }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t n, std::size_t m,
               std::size_t k) {
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const T* ai = a + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T* bp = b + p * m;
      T acc{0};
      for (std::size_t j = 0; j < m; ++j) acc += ai[j] * bp[j];
      c[i * k + p] = acc;
    }
  }
}

template <typename T>
void assign_nearest(const T* points, std::size_t n, std::size_t stride,
                    std::size_t dim, const T* codewords, std::size_t count,
                    std::int32_t* out, std::size_t out_stride,
                    double* distances = nullptr) {
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double dist = 0.0;
    out[i * out_stride] = static_cast<std::int32_t>(
        nearest_index(points + i * stride, codewords, count, dim, &dist));
    if (distances != nullptr) distances[i * out_stride] = dist;
  }
}

}  // namespace parallel

// Below this many multiply-adds the thread fork costs more than it saves.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

inline bool use_parallel(std::size_t work) {
#ifdef _OPENMP
  return work >= kParallelThreshold && omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t n, std::size_t k,
            std::size_t m) {
  if (use_parallel(n * k * m)) {
    parallel::matmul(a, b, c, n, k, m);
  } else {
    serial::matmul(a, b, c, n, k, m);
  }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, std::size_t n, std::size_t k,
               std::size_t m) {
  if (use_parallel(n * k * m)) {
    parallel::matmul_tn(a, b, c, n, k, m);
  } else {
    serial::matmul_tn(a, b, c, n, k, m);
  }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t n, std::size_t m,
               std::size_t k) {
  if (use_parallel(n * k * m)) {
    parallel::matmul_nt(a, b, c, n, m, k);
  } else {
    serial::matmul_nt(a, b, c, n, m, k);
  }
}

template <typename T>
void assign_nearest(const T* points, std::size_t n, std::size_t stride,
                    std::size_t dim, const T* codewords, std::size_t count,
                    std::int32_t* out, std::size_t out_stride,
                    double* distances = nullptr) {
  if (use_parallel(n * count * dim)) {
    parallel::assign_nearest(points, n, stride, dim, codewords, count, out,
                             out_stride, distances);
  } else {
    serial::assign_nearest(points, n, stride, dim, codewords, count, out,
                           out_stride, distances);
  }
}

}  // namespace artoveq::kernels
