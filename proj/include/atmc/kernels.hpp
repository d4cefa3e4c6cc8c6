#pragma once

#include <cstddef>

#include "atmc/graph.hpp"

namespace atmc::kernels {

/// C[m×n] = beta·C + op(A)·op(B), all row-major. op(A) is m×k, op(B) is k×n.
/// Backed by Eigen's single-threaded GEMM; the k-reduction order is fixed for a
/// given shape, so results are reproducible run to run.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double beta, double* c, Precision precision);

/// Same contract on float buffers, computed in single precision.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, const float* b, float beta, float* c);

}  // namespace atmc::kernels
