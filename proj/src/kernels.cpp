#include "lcfb/kernels.hpp"

#include <algorithm>
#include <vector>

#include <omp.h>

namespace lcfb::kernels {
namespace {

inline void matmul_row(const double* a_row, const double* b, double* c_row, std::size_t k, std::size_t n,
                       bool accumulate) {
  if (!accumulate) std::fill(c_row, c_row + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a_row[p];
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

// Row i of a^T * b: sum over p of a[p][i] * b[p][:]
inline void matmul_tn_row(const double* a, const double* b, double* c_row, std::size_t i, std::size_t m,
                          std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    if (av == 0.0) continue;
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
  }
}

std::vector<double> transpose(std::span<const double> b, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = b[r * cols + c];
  }
  return t;
}

bool use_parallel(std::size_t m, std::size_t k, std::size_t n) {
  return m > 1 && m * k * n >= kParallelThreshold && omp_get_max_threads() > 1;
}

}  // namespace

int max_threads() { return omp_get_max_threads(); }

void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n, accumulate);
}

void matmul_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                     std::size_t k, std::size_t n, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_row(a.data() + r * k, b.data(), c.data() + r * n, k, n, accumulate);
  }
}

void matmul_tn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                      std::size_t k, std::size_t n) {
  // Row-major sweep over a and b keeps this cache friendly; accumulation
  // order per output element is still ascending in p.
  for (std::size_t p = 0; p < k; ++p) {
    const double* a_row = a.data() + p * m;
    const double* b_row = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a_row[i];
      if (av == 0.0) continue;
      double* c_row = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
}

void matmul_tn_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                        std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_tn_row(a.data(), b.data(), c.data() + r * n, r, m, k, n);
  }
}

void matmul_nt_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                      std::size_t k, std::size_t n) {
  const auto bt = transpose(b, n, k);
  matmul_serial(a, bt, c, m, k, n, true);
}

void matmul_nt_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                        std::size_t k, std::size_t n) {
  const auto bt = transpose(b, n, k);
  matmul_parallel(a, bt, c, m, k, n, true);
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate) {
  if (use_parallel(m, k, n)) {
    matmul_parallel(a, b, c, m, k, n, accumulate);
  } else {
    matmul_serial(a, b, c, m, k, n, accumulate);
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  if (use_parallel(m, k, n)) {
    matmul_tn_parallel(a, b, c, m, k, n);
  } else {
    matmul_tn_serial(a, b, c, m, k, n);
  }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n) {
  if (use_parallel(m, k, n)) {
    matmul_nt_parallel(a, b, c, m, k, n);
  } else {
    matmul_nt_serial(a, b, c, m, k, n);
  }
}

}  // namespace lcfb::kernels
