#include "atmc/kernels.hpp"

#include <Eigen/Core>

namespace atmc::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat<double>>;
using MutMap = Eigen::Map<RowMat<double>>;

template <typename Out, typename L, typename R, typename S>
void accumulate(Out& out, const L& lhs, const R& rhs, S beta) {
  if (beta == 0.0) {
    out.noalias() = lhs * rhs;
  } else {
    if (beta != 1.0) out *= beta;
    out.noalias() += lhs * rhs;
  }
}

template <typename T>
void gemm_impl(bool trans_a, bool trans_b, Eigen::Index m, Eigen::Index n, Eigen::Index k,
               const T* a, const T* b, T beta, T* c) {
  Eigen::Map<RowMat<T>> out(c, m, n);
  if (k == 0) {
    if (beta == T(0)) out.setZero();
    else out *= beta;
    return;
  }
  // Stored shapes: A is (trans_a ? k×m : m×k), B is (trans_b ? n×k : k×n).
  Eigen::Map<const RowMat<T>> am(a, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const RowMat<T>> bm(b, trans_b ? n : k, trans_b ? k : n);
  if (!trans_a && !trans_b) accumulate(out, am, bm, beta);
  else if (trans_a && !trans_b) accumulate(out, am.transpose(), bm, beta);
  else if (!trans_a && trans_b) accumulate(out, am, bm.transpose(), beta);
  else accumulate(out, am.transpose(), bm.transpose(), beta);
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double beta, double* c, Precision precision) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MutMap out(c, M, N);
  if (k == 0) {
    if (beta == 0.0) out.setZero();
    else out *= beta;
    return;
  }
  if (precision == Precision::f64) {
    gemm_impl<double>(trans_a, trans_b, M, N, K, a, b, beta, c);
    return;
  }
  ConstMap am(a, trans_a ? K : M, trans_a ? M : K);
  ConstMap bm(b, trans_b ? N : K, trans_b ? K : N);
  const RowMat<float> af = am.cast<float>();
  const RowMat<float> bf = bm.cast<float>();
  RowMat<float> prod;
  if (!trans_a && !trans_b) prod.noalias() = af * bf;
  else if (trans_a && !trans_b) prod.noalias() = af.transpose() * bf;
  else if (!trans_a && trans_b) prod.noalias() = af * bf.transpose();
  else prod.noalias() = af.transpose() * bf.transpose();
  if (beta == 0.0) {
    out = prod.cast<double>();
  } else {
    if (beta != 1.0) out *= beta;
    out += prod.cast<double>();
  }
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const float* a, const float* b, float beta, float* c) {
  gemm_impl<float>(trans_a, trans_b, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n),
                   static_cast<Eigen::Index>(k), a, b, beta, c);
}

}  // namespace atmc::kernels
