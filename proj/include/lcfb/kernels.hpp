#pragma once

#include <cstddef>
#include <span>

// Dense matrix kernels behind the autodiff graph. Each product comes in a
// serial reference form and an OpenMP form that splits output rows across
// threads. Both accumulate every output element over the inner dimension in
// the same ascending order, so their results are bit-identical.
namespace lcfb::kernels {

// c[m x n] (+)= a[m x k] * b[k x n]
void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                   std::size_t k, std::size_t n, bool accumulate);
void matmul_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                     std::size_t k, std::size_t n, bool accumulate);

// c[m x n] += a^T * b, with a[k x m], b[k x n]
void matmul_tn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                      std::size_t k, std::size_t n);
void matmul_tn_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                        std::size_t k, std::size_t n);

// c[m x n] += a * b^T, with a[m x k], b[n x k]
void matmul_nt_serial(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                      std::size_t k, std::size_t n);
void matmul_nt_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                        std::size_t k, std::size_t n);

// Dispatchers used by the graph: parallel when more than one thread is
// available and the product is large enough to amortize the fork.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m, std::size_t k,
            std::size_t n, bool accumulate);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
               std::size_t k, std::size_t n);

// Work (m*k*n) below which the dispatchers stay serial.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

int max_threads();

}  // namespace lcfb::kernels
