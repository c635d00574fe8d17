#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmarx {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

/// Normalized M x M DFT matrix, entry (k, n) = exp(-j 2 pi k n / M) / sqrt(M).
inline CMatrix dft_matrix(int size) {
  if (size < 1) throw std::invalid_argument("dft_matrix: size must be >= 1");
  CMatrix f(size, size);
  const double scale = 1.0 / std::sqrt(static_cast<double>(size));
  for (int k = 0; k < size; ++k) {
    for (int n = 0; n < size; ++n) {
      const double phase = -2.0 * std::numbers::pi * k * n / size;
      f(k, n) = scale * Complex(std::cos(phase), std::sin(phase));
    }
  }
  return f;
}

inline CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r)
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      out.block(r * b.rows(), c * b.cols(), b.rows(), b.cols()) = a(r, c) * b;
  return out;
}

inline CMatrix block_diag(const std::vector<CMatrix>& blocks) {
  if (blocks.empty()) throw std::invalid_argument("block_diag: no blocks");
  Eigen::Index rows = 0, cols = 0;
  for (const auto& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  CMatrix out = CMatrix::Zero(rows, cols);
  Eigen::Index r = 0, c = 0;
  for (const auto& b : blocks) {
    out.block(r, c, b.rows(), b.cols()) = b;
    r += b.rows();
    c += b.cols();
  }
  return out;
}

inline void require_finite(const CMatrix& m, const char* what) {
  if (!m.allFinite()) throw std::runtime_error(std::string(what) + ": non-finite entries");
}

inline void require_hermitian(const CMatrix& m, const char* what, double tol = 1e-10) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.adjoint()).cwiseAbs().maxCoeff() > tol * scale)
    throw std::invalid_argument(std::string(what) + ": matrix is not Hermitian");
}

/// Solves A X = B for Hermitian positive definite A via Cholesky.
/// Throws if a pivot falls below 1e-12 * tr(A) / n (not positive definite).
inline CMatrix hermitian_solve(const CMatrix& a, const CMatrix& b) {
  if (a.rows() != a.cols()) throw std::invalid_argument("hermitian_solve: A not square");
  if (a.rows() != b.rows()) throw std::invalid_argument("hermitian_solve: size mismatch");
  Eigen::LLT<CMatrix> llt(a);
  const double pivot_floor = 1e-12 * a.trace().real() / static_cast<double>(a.rows());
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("hermitian_solve: matrix is not positive definite");
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double d = llt.matrixLLT()(i, i).real();
    if (!(d * d > pivot_floor))
      throw std::runtime_error("hermitian_solve: pivot below threshold, not positive definite");
  }
  return llt.solve(b);
}

inline CMatrix hermitian_inverse(const CMatrix& a) {
  return hermitian_solve(a, CMatrix::Identity(a.rows(), a.cols()));
}

/// Rotates v so its largest-magnitude entry is real and positive. Makes
/// eigenvector outputs deterministic (they are defined up to phase).
inline void fix_phase(CVector& v) {
  Eigen::Index imax = 0;
  v.cwiseAbs().maxCoeff(&imax);
  const Complex pivot = v(imax);
  const double mag = std::abs(pivot);
  if (mag > 0) v *= std::conj(pivot) / mag;
}

struct EigenPair {
  CVector vector;  // unit Euclidean norm, deterministic phase
  double value;
};

/// Largest-eigenvalue solution of A v = lambda B v for Hermitian PSD A and
/// Hermitian PD B. Reduces via B = L L^H to a standard Hermitian problem on
/// L^-1 A L^-H, then back-transforms.
inline EigenPair max_generalized_eigvec(const CMatrix& a, const CMatrix& b) {
  if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows())
    throw std::invalid_argument("max_generalized_eigvec: need square matrices of equal size");
  Eigen::LLT<CMatrix> llt(b);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("max_generalized_eigvec: B is not positive definite");
  const CMatrix l = llt.matrixL();
  CMatrix c = l.triangularView<Eigen::Lower>().solve(a);
  c = l.triangularView<Eigen::Lower>().solve(c.adjoint()).adjoint();
  c = 0.5 * (c + c.adjoint()).eval();  // clean roundoff
  Eigen::SelfAdjointEigenSolver<CMatrix> es(c);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("max_generalized_eigvec: eigensolver failed");
  const Eigen::Index last = a.rows() - 1;
  CVector v = llt.matrixU().solve(CVector(es.eigenvectors().col(last)));
  v.normalize();
  fix_phase(v);
  return {std::move(v), es.eigenvalues()(last)};
}

/// Hermitian PSD square root with negative eigenvalues clipped to zero
/// (Jakes correlation matrices can be indefinite at roundoff level).
inline CMatrix hermitian_sqrt(const CMatrix& a) {
  require_hermitian(a, "hermitian_sqrt");
  Eigen::SelfAdjointEigenSolver<CMatrix> es(a);
  if (es.info() != Eigen::Success) throw std::runtime_error("hermitian_sqrt: eigensolver failed");
  RVector d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().adjoint();
}

}  // namespace dmarx
