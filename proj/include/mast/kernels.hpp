#pragma once

// Dense inner loops used by training and evaluation. Every kernel exists twice:
// `serial` is the reference implementation kept for testing, `omp` is the
// OpenMP-parallel version used by the library. Work is split over output rows
// and every output element is accumulated in the same order in both versions,
// so the two agree bit for bit regardless of thread count.

#include <cstddef>
#include <span>

namespace mast::kernels {

// Row-major views: element (i, j) of an r x c matrix lives at i * c + j.

namespace serial {
// C[m x n] = A[m x k] * B[k x n]; C is overwritten.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
// C[m x n] += A^T * B with A[k x m], B[k x n].
void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
// C[m x n] += A * B^T with A[m x k], B[n x k].
void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
// G[b x b] of cosine similarities between the rows of F[b x c]; rows must be nonzero.
void cosine_graph(std::span<const double> f, std::span<double> g, std::size_t b, std::size_t c);
// Mean over rows p of P[n x 3] of min over rows q of Q[m x 3] of |p - q|_2.
double mean_closest_distance(std::span<const double> p, std::span<const double> q,
                             std::size_t n, std::size_t m);
}  // namespace serial

namespace omp {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void cosine_graph(std::span<const double> f, std::span<double> g, std::size_t b, std::size_t c);
double mean_closest_distance(std::span<const double> p, std::span<const double> q,
                             std::size_t n, std::size_t m);
}  // namespace omp

}  // namespace mast::kernels
