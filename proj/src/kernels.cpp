#include "maskstream/kernels.hpp"

#include <cstring>
#include <stdexcept>

#if defined(__x86_64__) || defined(_M_X64)
#define MASKSTREAM_X86 1
#include <immintrin.h>
#else
#define MASKSTREAM_X86 0
#endif

namespace maskstream::kernels {

namespace {

Isa detect_isa() {
#if MASKSTREAM_X86 && defined(__GNUC__)
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
    return Isa::Avx2;
  }
#endif
  return Isa::Scalar;
}

Isa g_isa = detect_isa();

// ---------------------------------------------------------------- scalar

void axpy_scalar(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// C = A(m x k) * B(k x n), ikj loop so the inner update is an axpy.
void gemm_nn_scalar(const double* a, const double* b, double* c, int m, int k,
                    int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + std::size_t(i) * n;
    const double* ai = a + std::size_t(i) * k;
    for (int p = 0; p < k; ++p) {
      axpy_scalar(ai[p], b + std::size_t(p) * n, ci, std::size_t(n));
    }
  }
}

// C = A(m x k) * B(n x k)^T, rows of both operands are contiguous.
void gemm_nt_scalar(const double* a, const double* b, double* c, int m, int k,
                    int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + std::size_t(i) * k;
    double* ci = c + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      ci[j] += dot_scalar(ai, b + std::size_t(j) * k, std::size_t(k));
    }
  }
}

// C = A(k x m)^T * B(k x n)
void gemm_tn_scalar(const double* a, const double* b, double* c, int m, int k,
                    int n) {
  for (int p = 0; p < k; ++p) {
    const double* ap = a + std::size_t(p) * m;
    const double* bp = b + std::size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      axpy_scalar(ap[i], bp, c + std::size_t(i) * n, std::size_t(n));
    }
  }
}

// ---------------------------------------------------------------- avx2

#if MASKSTREAM_X86

__attribute__((target("avx2,fma"))) void axpy_avx2(double a, const double* x,
                                                   double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

__attribute__((target("avx2,fma"))) double dot_avx2(const double* a,
                                                    const double* b,
                                                    std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  }
  double lanes[4];
  _mm256_storeu_pd(lanes, acc);
  double s = lanes[0] + lanes[1] + lanes[2] + lanes[3];
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

__attribute__((target("avx2,fma"))) void gemm_nn_avx2(const double* a,
                                                      const double* b,
                                                      double* c, int m, int k,
                                                      int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + std::size_t(i) * n;
    const double* ai = a + std::size_t(i) * k;
    for (int p = 0; p < k; ++p) {
      axpy_avx2(ai[p], b + std::size_t(p) * n, ci, std::size_t(n));
    }
  }
}

__attribute__((target("avx2,fma"))) void gemm_nt_avx2(const double* a,
                                                      const double* b,
                                                      double* c, int m, int k,
                                                      int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + std::size_t(i) * k;
    double* ci = c + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      ci[j] += dot_avx2(ai, b + std::size_t(j) * k, std::size_t(k));
    }
  }
}

__attribute__((target("avx2,fma"))) void gemm_tn_avx2(const double* a,
                                                      const double* b,
                                                      double* c, int m, int k,
                                                      int n) {
  for (int p = 0; p < k; ++p) {
    const double* ap = a + std::size_t(p) * m;
    const double* bp = b + std::size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      axpy_avx2(ap[i], bp, c + std::size_t(i) * n, std::size_t(n));
    }
  }
}

#endif  // MASKSTREAM_X86

}  // namespace

Isa active_isa() { return g_isa; }

void force_isa(Isa isa) {
#if !MASKSTREAM_X86
  if (isa == Isa::Avx2) throw std::runtime_error("AVX2 not available");
#else
  if (isa == Isa::Avx2 && detect_isa() != Isa::Avx2)
    throw std::runtime_error("AVX2 not available on this CPU");
#endif
  g_isa = isa;
}

void reset_isa() { g_isa = detect_isa(); }

const char* isa_name(Isa isa) {
  return isa == Isa::Avx2 ? "avx2" : "scalar";
}

void axpy(double a, const double* x, double* y, std::size_t n) {
#if MASKSTREAM_X86
  if (g_isa == Isa::Avx2) {
    axpy_avx2(a, x, y, n);
    return;
  }
#endif
  axpy_scalar(a, x, y, n);
}

double dot(const double* a, const double* b, std::size_t n) {
#if MASKSTREAM_X86
  if (g_isa == Isa::Avx2) return dot_avx2(a, b, n);
#endif
  return dot_scalar(a, b, n);
}

void gemm(const double* a, const double* b, double* c, int m, int k, int n,
          bool trans_a, bool trans_b, bool accumulate) {
  if (trans_a && trans_b) throw std::invalid_argument("gemm: TT unsupported");
  if (!accumulate) std::memset(c, 0, sizeof(double) * std::size_t(m) * n);
#if MASKSTREAM_X86
  if (g_isa == Isa::Avx2) {
    if (!trans_a && !trans_b)
      gemm_nn_avx2(a, b, c, m, k, n);
    else if (trans_b)
      gemm_nt_avx2(a, b, c, m, k, n);
    else
      gemm_tn_avx2(a, b, c, m, k, n);
    return;
  }
#endif
  if (!trans_a && !trans_b)
    gemm_nn_scalar(a, b, c, m, k, n);
  else if (trans_b)
    gemm_nt_scalar(a, b, c, m, k, n);
  else
    gemm_tn_scalar(a, b, c, m, k, n);
}

}  // namespace maskstream::kernels
