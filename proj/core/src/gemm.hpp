#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <vector>

#if defined(__AVX2__) || defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace xdg::detail {

constexpr std::size_t MR = 8, NR = 8;

// acc[i][j] = fma-chain over p of a[p*MR+i] * b[p*NR+j], p increasing
inline void kernel(std::size_t k, const double* a, const double* b, double (&acc)[MR][NR]) {
#if defined(__AVX512F__)
  __m512d c[MR];
  for (auto& v : c) v = _mm512_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m512d bv = _mm512_loadu_pd(b + p * NR);
    for (std::size_t i = 0; i < MR; ++i) c[i] = _mm512_fmadd_pd(_mm512_set1_pd(a[p * MR + i]), bv, c[i]);
  }
  for (std::size_t i = 0; i < MR; ++i) _mm512_storeu_pd(acc[i], c[i]);
#elif defined(__AVX2__) && defined(__FMA__)
  __m256d c[MR][2];
  for (auto& r : c) r[0] = r[1] = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * NR), b1 = _mm256_loadu_pd(b + p * NR + 4);
    for (std::size_t i = 0; i < MR; ++i) {
      const __m256d av = _mm256_set1_pd(a[p * MR + i]);
      c[i][0] = _mm256_fmadd_pd(av, b0, c[i][0]);
      c[i][1] = _mm256_fmadd_pd(av, b1, c[i][1]);
    }
  }
  for (std::size_t i = 0; i < MR; ++i) {
    _mm256_storeu_pd(acc[i], c[i][0]);
    _mm256_storeu_pd(acc[i] + 4, c[i][1]);
  }
#else
  for (auto& r : acc) std::fill(std::begin(r), std::end(r), 0.0);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < MR; ++i)
      for (std::size_t j = 0; j < NR; ++j) acc[i][j] = std::fma(a[p * MR + i], b[p * NR + j], acc[i][j]);
#endif
}

// C[m,n] (+)= op(A) * op(B), all row-major. op(A) is [m,k], op(B) is [k,n].
// Each C[i,j] gets its k products summed in increasing order and then added,
// independent of sizes and buffer alignment, so results are bitwise
// reproducible. Library GEMMs pick kernels by pointer alignment and do not.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
                 const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (m == 0 || n == 0 || k == 0) return;

  // op(B) as column panels: panel q holds columns [q*NR, q*NR+NR) as k rows of NR, zero padded
  const std::size_t nq = (n + NR - 1) / NR;
  std::vector<double> bp(nq * k * NR, 0.0);
  for (std::size_t q = 0; q < nq; ++q) {
    const std::size_t j0 = q * NR, w = std::min(NR, n - j0);
    double* dst = bp.data() + q * k * NR;
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t jj = 0; jj < w; ++jj) {
        dst[p * NR + jj] = trans_b ? b[(j0 + jj) * k + p] : b[p * n + j0 + jj];
      }
  }
  // op(A) as row panels: k columns of MR
  const std::size_t np = (m + MR - 1) / MR;
  std::vector<double> ap(np * k * MR, 0.0);
  for (std::size_t r = 0; r < np; ++r) {
    const std::size_t i0 = r * MR, h = std::min(MR, m - i0);
    double* dst = ap.data() + r * k * MR;
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t ii = 0; ii < h; ++ii) {
        dst[p * MR + ii] = trans_a ? a[p * m + i0 + ii] : a[(i0 + ii) * k + p];
      }
  }

  for (std::size_t q = 0; q < nq; ++q) {
    const std::size_t j0 = q * NR, w = std::min(NR, n - j0);
    const double* __restrict bq = bp.data() + q * k * NR;
    for (std::size_t r = 0; r < np; ++r) {
      const std::size_t i0 = r * MR, h = std::min(MR, m - i0);
      const double* __restrict ar = ap.data() + r * k * MR;
      double acc[MR][NR];
      kernel(k, ar, bq, acc);
      for (std::size_t ii = 0; ii < h; ++ii)
        for (std::size_t jj = 0; jj < w; ++jj) c[(i0 + ii) * n + j0 + jj] += acc[ii][jj];
    }
  }
}

}  // namespace xdg::detail
