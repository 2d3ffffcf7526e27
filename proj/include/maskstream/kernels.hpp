#pragma once
// Dense double-precision kernels backing all tensor math.
// A scalar reference path and an AVX2/FMA path are built side by side;
// the active one is picked at runtime from CPU capabilities.

#include <cstddef>

namespace maskstream::kernels {

enum class Isa { Scalar, Avx2 };

// ISA selected at startup (AVX2 when the CPU supports avx2+fma).
Isa active_isa();

// Override the dispatch, mainly for equivalence tests. Thread-unsafe by
// contract: call before any parallel work.
void force_isa(Isa isa);
void reset_isa();

const char* isa_name(Isa isa);

// y[i] += a * x[i]
void axpy(double a, const double* x, double* y, std::size_t n);

double dot(const double* a, const double* b, std::size_t n);

// C (m x n, row-major) = A op B, optionally accumulating into C.
//   trans_a=false, trans_b=false: A is m x k, B is k x n
//   trans_a=false, trans_b=true : A is m x k, B is n x k
//   trans_a=true,  trans_b=false: A is k x m, B is k x n
void gemm(const double* a, const double* b, double* c, int m, int k, int n,
          bool trans_a, bool trans_b, bool accumulate);

}  // namespace maskstream::kernels
