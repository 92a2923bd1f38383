#pragma once

#include <cmath>

#include "reze/common.hpp"

namespace reze {

// Orthonormal eigenbasis of a covariance matrix. Columns of `vectors` are
// eigenvectors ordered by non-increasing eigenvalue. Each column is flipped so
// its largest-magnitude entry is positive (ties broken by lowest index), which
// makes repeated decompositions of identical input byte-stable.
struct EigenBasis {
  Matrix vectors;      // D x D, columns are eigenvectors
  Vector eigenvalues;  // length D, variance units

  Index dim() const { return vectors.rows(); }
};

// (1/N) X^T X of an already-centered sample matrix.
inline Matrix covariance(const Matrix& centered) {
  if (centered.rows() == 0) throw validation_error("empty sample set");
  require(centered.allFinite(), "covariance: non-finite input");
  const double n = static_cast<double>(centered.rows());
  return (centered.transpose() * centered) / n;
}

namespace detail {

inline void canonicalize_columns(Matrix& w) {
  for (Index j = 0; j < w.cols(); ++j) {
    Index pivot = 0;
    double best = std::abs(w(0, j));
    for (Index i = 1; i < w.rows(); ++i) {
      const double a = std::abs(w(i, j));
      if (a > best) {
        best = a;
        pivot = i;
      }
    }
    if (w(pivot, j) < 0.0) w.col(j) = -w.col(j);
  }
}

}  // namespace detail

// Eigendecomposition of a symmetric matrix with fixed ordering and sign
// conventions. The input is symmetrized as (C + C^T)/2 first. Eigenvalues in
// [-1e-9, 0) are clamped to zero; anything more negative signals that the
// input was not a covariance matrix and is rejected.
inline EigenBasis symmetric_evd(const Matrix& c) {
  if (c.rows() != c.cols())
    throw validation_error("symmetric_evd: matrix must be square");
  require(c.allFinite(), "symmetric_evd: non-finite input");
  const Matrix sym = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success)
    throw validation_error("symmetric_evd: eigensolver did not converge");

  const Index d = c.rows();
  EigenBasis basis;
  basis.vectors.resize(d, d);
  basis.eigenvalues.resize(d);
  // Eigen reports ascending eigenvalues; store them non-increasing.
  for (Index j = 0; j < d; ++j) {
    basis.eigenvalues[j] = solver.eigenvalues()[d - 1 - j];
    basis.vectors.col(j) = solver.eigenvectors().col(d - 1 - j);
  }
  for (Index j = 0; j < d; ++j) {
    double& lambda = basis.eigenvalues[j];
    if (lambda < 0.0) {
      if (lambda < -1e-9)
        throw validation_error(
            "symmetric_evd: eigenvalue below -1e-9, input is not a covariance");
      lambda = 0.0;
    }
  }
  detail::canonicalize_columns(basis.vectors);
  return basis;
}

// z = W^T (x - u)
inline Vector project(const Vector& x, const Vector& u, const EigenBasis& basis) {
  if (x.size() != basis.dim() || u.size() != basis.dim())
    throw validation_error("project: dimension mismatch");
  return basis.vectors.transpose() * (x - u);
}

// Row n of the result is W^T (x_n - u).
inline Matrix project_rows(const Matrix& x, const Vector& u, const EigenBasis& basis) {
  if (x.cols() != basis.dim() || u.size() != basis.dim())
    throw validation_error("project_rows: dimension mismatch");
  return (x.rowwise() - u.transpose()) * basis.vectors;
}

// x = W z + u
inline Vector reconstruct(const Vector& z, const Vector& u, const EigenBasis& basis) {
  if (z.size() != basis.dim() || u.size() != basis.dim())
    throw validation_error("reconstruct: dimension mismatch");
  return basis.vectors * z + u;
}

inline Matrix reconstruct_rows(const Matrix& z, const Vector& u, const EigenBasis& basis) {
  if (z.cols() != basis.dim() || u.size() != basis.dim())
    throw validation_error("reconstruct_rows: dimension mismatch");
  return (z * basis.vectors.transpose()).rowwise() + u.transpose();
}

}  // namespace reze
