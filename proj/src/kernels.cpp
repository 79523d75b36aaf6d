#include "mast/kernels.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace mast::kernels {

namespace {

// Below this many multiply-adds the thread team costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

inline void matmul_row(const double* a_row, const double* b, double* c_row, std::size_t k,
                       std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) c_row[j] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double s = a_row[p];
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += s * b_row[j];
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c_row, std::size_t i,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double s = a[p * m + i];
    if (s == 0.0) continue;
    const double* b_row = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += s * b_row[j];
  }
}

inline void matmul_nt_row(const double* a_row, const double* b, double* c_row, std::size_t k,
                          std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    const double* b_row = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += a_row[p] * b_row[p];
    c_row[j] += s;
  }
}

inline void cosine_row(const double* f, const double* norms, double* g_row, std::size_t i,
                       std::size_t b, std::size_t c) {
  const double* fi = f + i * c;
  for (std::size_t j = 0; j < b; ++j) {
    const double* fj = f + j * c;
    double s = 0.0;
    for (std::size_t p = 0; p < c; ++p) s += fi[p] * fj[p];
    g_row[j] = i == j ? 1.0 : s / (norms[i] * norms[j]);
  }
}

inline double closest_for(const double* p, const double* q, std::size_t m) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < m; ++j) {
    const double dx = p[0] - q[3 * j];
    const double dy = p[1] - q[3 * j + 1];
    const double dz = p[2] - q[3 * j + 2];
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < best) best = d;
  }
  return std::sqrt(best);
}

std::vector<double> row_norms(std::span<const double> f, std::size_t b, std::size_t c) {
  std::vector<double> norms(b);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < c; ++p) s += f[i * c + p] * f[i * c + p];
    norms[i] = std::sqrt(s);
  }
  return norms;
}

}  // namespace

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_tn_row(a.data(), b.data(), c.data() + i * n, i, m, k, n);
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void cosine_graph(std::span<const double> f, std::span<double> g, std::size_t b, std::size_t c) {
  const auto norms = row_norms(f, b, c);
  for (std::size_t i = 0; i < b; ++i) cosine_row(f.data(), norms.data(), g.data() + i * b, i, b, c);
}

double mean_closest_distance(std::span<const double> p, std::span<const double> q,
                             std::size_t n, std::size_t m) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += closest_for(p.data() + 3 * i, q.data(), m);
  return sum / static_cast<double>(n);
}

}  // namespace serial

namespace omp {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_row(a.data() + r * k, b.data(), c.data() + r * n, k, n);
  }
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_tn_row(a.data(), b.data(), c.data() + r * n, r, m, k, n);
  }
}

void matmul_nt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_nt_row(a.data() + r * k, b.data(), c.data() + r * n, k, n);
  }
}

void cosine_graph(std::span<const double> f, std::span<double> g, std::size_t b, std::size_t c) {
  const auto norms = row_norms(f, b, c);
  const long rows = static_cast<long>(b);
#pragma omp parallel for schedule(static) if (b * b * c > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    cosine_row(f.data(), norms.data(), g.data() + r * b, r, b, c);
  }
}

double mean_closest_distance(std::span<const double> p, std::span<const double> q,
                             std::size_t n, std::size_t m) {
  std::vector<double> per_point(n);
  const long rows = static_cast<long>(n);
#pragma omp parallel for schedule(static) if (n * m > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    per_point[r] = closest_for(p.data() + 3 * r, q.data(), m);
  }
  // Fixed-order reduction keeps the result identical to the serial kernel.
  double sum = 0.0;
  for (double d : per_point) sum += d;
  return sum / static_cast<double>(n);
}

}  // namespace omp

}  // namespace mast::kernels
