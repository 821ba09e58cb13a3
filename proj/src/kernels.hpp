#pragma once

// Dense kernels for the trainer.
//
// Every output element is produced by one fixed chain of fused multiply-adds
// whose order depends only on the reduction index, never on how many rows are
// processed together or which code path (vector or scalar tail) handles the
// element. Vector fma is elementwise and correctly rounded, exactly like
// std::fma, so results are bit-identical across batch sizes and instruction
// sets.

#include <cmath>
#include <cstddef>
#include <vector>

#if defined(__AVX512F__) || (defined(__AVX2__) && defined(__FMA__))
#include <immintrin.h>
#endif
#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace arlab::kernels {

// Flush-to-zero and denormals-are-zero for the current thread while alive.
// Late in training, gradients go subnormal and each such operation takes the
// slow microcode path; rounding them to zero keeps steps at a constant cost
// and is still deterministic.
class FlushDenormals {
 public:
#if defined(__SSE__)
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~FlushDenormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#else
  FlushDenormals() = default;
#endif
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;
};

template <typename Real>
struct Simd;

#if defined(__AVX512F__)
template <>
struct Simd<double> {
  using V = __m512d;
  static constexpr std::size_t kLanes = 8;
  static V load(const double* p) { return _mm512_loadu_pd(p); }
  static void store(double* p, V v) { _mm512_storeu_pd(p, v); }
  static V set1(double a) { return _mm512_set1_pd(a); }
  static V zero() { return _mm512_setzero_pd(); }
  static V fma(V a, V b, V c) { return _mm512_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm512_add_pd(a, b); }
};
template <>
struct Simd<float> {
  using V = __m512;
  static constexpr std::size_t kLanes = 16;
  static V load(const float* p) { return _mm512_loadu_ps(p); }
  static void store(float* p, V v) { _mm512_storeu_ps(p, v); }
  static V set1(float a) { return _mm512_set1_ps(a); }
  static V zero() { return _mm512_setzero_ps(); }
  static V fma(V a, V b, V c) { return _mm512_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm512_add_ps(a, b); }
};
#elif defined(__AVX2__) && defined(__FMA__)
template <>
struct Simd<double> {
  using V = __m256d;
  static constexpr std::size_t kLanes = 4;
  static V load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, V v) { _mm256_storeu_pd(p, v); }
  static V set1(double a) { return _mm256_set1_pd(a); }
  static V zero() { return _mm256_setzero_pd(); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
};
template <>
struct Simd<float> {
  using V = __m256;
  static constexpr std::size_t kLanes = 8;
  static V load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, V v) { _mm256_storeu_ps(p, v); }
  static V set1(float a) { return _mm256_set1_ps(a); }
  static V zero() { return _mm256_setzero_ps(); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
};
#else
template <typename Real>
struct Simd {
  using V = Real;
  static constexpr std::size_t kLanes = 1;
  static V load(const Real* p) { return *p; }
  static void store(Real* p, V v) { *p = v; }
  static V set1(Real a) { return a; }
  static V zero() { return Real(0); }
  static V fma(V a, V b, V c) { return std::fma(a, b, c); }
  static V add(V a, V b) { return a + b; }
};
#endif

namespace detail {

// NR rows x NV vectors of out, chain over k in [k0, k1).
template <typename Real, int NR, int NV>
inline void affine_block(const Real* __restrict x, std::size_t ldx, const Real* __restrict w, std::size_t n_out,
                         Real* __restrict out, std::size_t ldo, std::size_t k0, std::size_t k1) {
  using S = Simd<Real>;
  constexpr std::size_t L = S::kLanes;
  typename S::V acc[NR][NV];
  for (int r = 0; r < NR; ++r) {
    for (int v = 0; v < NV; ++v) acc[r][v] = S::load(out + r * ldo + v * L);
  }
  for (std::size_t k = k0; k < k1; ++k) {
    const Real* wk = w + k * n_out;
    typename S::V wv[NV];
    for (int v = 0; v < NV; ++v) wv[v] = S::load(wk + v * L);
    for (int r = 0; r < NR; ++r) {
      const typename S::V a = S::set1(x[r * ldx + k]);
      for (int v = 0; v < NV; ++v) acc[r][v] = S::fma(a, wv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < NR; ++r) {
    for (int v = 0; v < NV; ++v) S::store(out + r * ldo + v * L, acc[r][v]);
  }
}

template <typename Real, int NR>
inline void affine_rows(const Real* x, std::size_t ldx, const Real* w, std::size_t n_out, Real* out, std::size_t ldo,
                        std::size_t i0, std::size_t nv, std::size_t k0, std::size_t k1) {
  switch (nv) {
    case 4: affine_block<Real, NR, 4>(x, ldx, w + i0, n_out, out + i0, ldo, k0, k1); break;
    case 3: affine_block<Real, NR, 3>(x, ldx, w + i0, n_out, out + i0, ldo, k0, k1); break;
    case 2: affine_block<Real, NR, 2>(x, ldx, w + i0, n_out, out + i0, ldo, k0, k1); break;
    case 1: affine_block<Real, NR, 1>(x, ldx, w + i0, n_out, out + i0, ldo, k0, k1); break;
    default: break;
  }
}

}  // namespace detail

/// out[r][i] = bias[i] + x[r][0]*w[0][i] + x[r][1]*w[1][i] + ..., one fma per
/// k in ascending order. `bias` may be null (zero). K is walked in chunks so
/// a slice of w stays in L1 while every row block passes over it; partial
/// sums round-trip through `out` unchanged.
template <typename Real>
void affine(std::size_t rows, std::size_t K, std::size_t n_out, const Real* __restrict x, std::size_t ldx,
            const Real* __restrict w, const Real* __restrict bias, Real* __restrict out, std::size_t ldo) {
  constexpr std::size_t L = Simd<Real>::kLanes;
  constexpr std::size_t kCols = 4 * L;
  constexpr std::size_t kChunk = 64;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < n_out; ++i) out[r * ldo + i] = bias ? bias[i] : Real(0);
  }
  const std::size_t n_vec = n_out / L * L;
  for (std::size_t i0 = 0; i0 < n_vec; i0 += kCols) {
    const std::size_t nv = (n_vec - i0 < kCols ? n_vec - i0 : kCols) / L;
    for (std::size_t k0 = 0; k0 < K; k0 += kChunk) {
      const std::size_t k1 = k0 + kChunk < K ? k0 + kChunk : K;
      std::size_t r0 = 0;
      for (; r0 + 4 <= rows; r0 += 4) {
        detail::affine_rows<Real, 4>(x + r0 * ldx, ldx, w, n_out, out + r0 * ldo, ldo, i0, nv, k0, k1);
      }
      for (; r0 < rows; ++r0) {
        detail::affine_rows<Real, 1>(x + r0 * ldx, ldx, w, n_out, out + r0 * ldo, ldo, i0, nv, k0, k1);
      }
    }
  }
  if (n_vec < n_out) {
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* xr = x + r * ldx;
      Real* o = out + r * ldo;
      for (std::size_t k = 0; k < K; ++k) {
        const Real a = xr[k];
        const Real* wk = w + k * n_out;
        for (std::size_t i = n_vec; i < n_out; ++i) o[i] = std::fma(a, wk[i], o[i]);
      }
    }
  }
}

namespace detail {

// s[k][i] = sum over rows (ascending) of x[r][k] * g[r][i], chained from zero,
// then handed to `apply(k, i, vector s)`.
template <typename Real, int NK, int NV, typename Apply>
inline void outer_block(std::size_t rows, const Real* __restrict x, std::size_t ldx, const Real* __restrict g,
                        std::size_t ldg, std::size_t k, std::size_t i0, Apply& apply) {
  using S = Simd<Real>;
  constexpr std::size_t L = S::kLanes;
  typename S::V acc[NK][NV];
  for (int a = 0; a < NK; ++a) {
    for (int v = 0; v < NV; ++v) acc[a][v] = S::zero();
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* gr = g + r * ldg + i0;
    typename S::V gv[NV];
    for (int v = 0; v < NV; ++v) gv[v] = S::load(gr + v * L);
    for (int a = 0; a < NK; ++a) {
      const typename S::V xv = S::set1(x[r * ldx + k + a]);
      for (int v = 0; v < NV; ++v) acc[a][v] = S::fma(xv, gv[v], acc[a][v]);
    }
  }
  for (int a = 0; a < NK; ++a) {
    for (int v = 0; v < NV; ++v) apply(k + a, i0 + v * L, acc[a][v]);
  }
}

template <typename Real, int NK, typename Apply>
inline void outer_cols(std::size_t rows, const Real* x, std::size_t ldx, const Real* g, std::size_t ldg, std::size_t k,
                       std::size_t i0, std::size_t nv, Apply& apply) {
  switch (nv) {
    case 4: outer_block<Real, NK, 4>(rows, x, ldx, g, ldg, k, i0, apply); break;
    case 3: outer_block<Real, NK, 3>(rows, x, ldx, g, ldg, k, i0, apply); break;
    case 2: outer_block<Real, NK, 2>(rows, x, ldx, g, ldg, k, i0, apply); break;
    case 1: outer_block<Real, NK, 1>(rows, x, ldx, g, ldg, k, i0, apply); break;
    default: break;
  }
}

// Drives the outer product; `vec(k, i, V)` and `scalar(k, i, s)` consume sums.
template <typename Real, typename VecApply, typename ScalarApply>
void outer_product(std::size_t rows, std::size_t K, std::size_t n_out, const Real* x, std::size_t ldx, const Real* g,
                   std::size_t ldg, VecApply vec, ScalarApply scalar) {
  constexpr std::size_t L = Simd<Real>::kLanes;
  constexpr std::size_t kCols = 4 * L;
  const std::size_t n_vec = n_out / L * L;
  for (std::size_t i0 = 0; i0 < n_vec; i0 += kCols) {
    const std::size_t nv = (n_vec - i0 < kCols ? n_vec - i0 : kCols) / L;
    std::size_t k = 0;
    for (; k + 4 <= K; k += 4) outer_cols<Real, 4>(rows, x, ldx, g, ldg, k, i0, nv, vec);
    for (; k < K; ++k) outer_cols<Real, 1>(rows, x, ldx, g, ldg, k, i0, nv, vec);
  }
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = n_vec; i < n_out; ++i) {
      Real s = 0;
      for (std::size_t r = 0; r < rows; ++r) s = std::fma(x[r * ldx + k], g[r * ldg + i], s);
      scalar(k, i, s);
    }
  }
}

}  // namespace detail

/// dw[k][i] += s[k][i] where s[k][i] = x[0][k]*g[0][i] + x[1][k]*g[1][i] + ...
/// is chained from zero with rows in ascending order.
template <typename Real>
void outer_accumulate(std::size_t rows, std::size_t K, std::size_t n_out, const Real* __restrict x, std::size_t ldx,
                      const Real* __restrict g, std::size_t ldg, Real* __restrict dw) {
  using S = Simd<Real>;
  detail::outer_product<Real>(
      rows, K, n_out, x, ldx, g, ldg,
      [dw, n_out](std::size_t k, std::size_t i, typename S::V s) {
        Real* p = dw + k * n_out + i;
        S::store(p, S::add(S::load(p), s));
      },
      [dw, n_out](std::size_t k, std::size_t i, Real s) { dw[k * n_out + i] += s; });
}

/// w[k][i] = fma(-rate, s[k][i], w[k][i]) with s as in outer_accumulate: one
/// SGD step on a weight block whose gradient is needed nowhere else. Equal to
/// outer_accumulate into a zero buffer followed by the same update.
template <typename Real>
void outer_sgd(std::size_t rows, std::size_t K, std::size_t n_out, const Real* __restrict x, std::size_t ldx,
               const Real* __restrict g, std::size_t ldg, Real rate, Real* __restrict w) {
  using S = Simd<Real>;
  const typename S::V neg = S::set1(-rate);
  detail::outer_product<Real>(
      rows, K, n_out, x, ldx, g, ldg,
      [w, n_out, neg](std::size_t k, std::size_t i, typename S::V s) {
        Real* p = w + k * n_out + i;
        S::store(p, S::fma(neg, s, S::load(p)));
      },
      [w, n_out, rate](std::size_t k, std::size_t i, Real s) {
        w[k * n_out + i] = std::fma(-rate, s, w[k * n_out + i]);
      });
}

/// dx[r][k] += s[r][k] where s[r][k] = w[k][0]*g[r][0] + w[k][1]*g[r][1] + ...
/// is chained from zero with i ascending. Vectorised across rows through a
/// transposed copy of g, so no horizontal reductions are needed.
template <typename Real>
void input_grad(std::size_t rows, std::size_t K, std::size_t n_out, const Real* __restrict w,
                const Real* __restrict g, std::size_t ldg, Real* __restrict dx, std::size_t ldx) {
  using S = Simd<Real>;
  constexpr std::size_t L = S::kLanes;
  constexpr std::size_t kRowVecs = 4;
  constexpr std::size_t kK = 4;
  thread_local std::vector<Real> gt;
  const std::size_t r_vec = rows / L * L;
  if (r_vec > 0) {
    gt.resize(n_out * r_vec);
    for (std::size_t r = 0; r < r_vec; ++r) {
      for (std::size_t i = 0; i < n_out; ++i) gt[i * r_vec + r] = g[r * ldg + i];
    }
  }
  for (std::size_t r0 = 0; r0 < r_vec; r0 += kRowVecs * L) {
    const std::size_t nv = (r_vec - r0 < kRowVecs * L ? r_vec - r0 : kRowVecs * L) / L;
    for (std::size_t k0 = 0; k0 < K; k0 += kK) {
      const std::size_t nk = K - k0 < kK ? K - k0 : kK;
      typename S::V acc[kK][kRowVecs];
      for (std::size_t a = 0; a < kK; ++a) {
        for (std::size_t v = 0; v < kRowVecs; ++v) acc[a][v] = S::zero();
      }
      if (nk == kK && nv == kRowVecs) {
        for (std::size_t i = 0; i < n_out; ++i) {
          const Real* gi = gt.data() + i * r_vec + r0;
          typename S::V gv[kRowVecs];
          for (std::size_t v = 0; v < kRowVecs; ++v) gv[v] = S::load(gi + v * L);
          for (std::size_t a = 0; a < kK; ++a) {
            const typename S::V wv = S::set1(w[(k0 + a) * n_out + i]);
            for (std::size_t v = 0; v < kRowVecs; ++v) acc[a][v] = S::fma(wv, gv[v], acc[a][v]);
          }
        }
      } else {
        for (std::size_t i = 0; i < n_out; ++i) {
          const Real* gi = gt.data() + i * r_vec + r0;
          for (std::size_t a = 0; a < nk; ++a) {
            const typename S::V wv = S::set1(w[(k0 + a) * n_out + i]);
            for (std::size_t v = 0; v < nv; ++v) acc[a][v] = S::fma(wv, S::load(gi + v * L), acc[a][v]);
          }
        }
      }
      alignas(64) Real lanes[kRowVecs * L];
      for (std::size_t a = 0; a < nk; ++a) {
        for (std::size_t v = 0; v < nv; ++v) S::store(lanes + v * L, acc[a][v]);
        for (std::size_t rr = 0; rr < nv * L; ++rr) dx[(r0 + rr) * ldx + k0 + a] += lanes[rr];
      }
    }
  }
  for (std::size_t r = r_vec; r < rows; ++r) {
    const Real* gr = g + r * ldg;
    for (std::size_t k = 0; k < K; ++k) {
      const Real* wk = w + k * n_out;
      Real s = 0;
      for (std::size_t i = 0; i < n_out; ++i) s = std::fma(wk[i], gr[i], s);
      dx[r * ldx + k] += s;
    }
  }
}

}  // namespace arlab::kernels
