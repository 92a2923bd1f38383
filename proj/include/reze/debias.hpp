#pragma once

#include <cmath>

#include "reze/common.hpp"
#include "reze/eigenspace.hpp"
#include "reze/fit.hpp"

namespace reze {

// Apply source-specific shrink factors in the eigenbasis:
//   debiased = W * diag(alpha_s) * W^T * (r - u) + u
// computed as project, scale, reconstruct.
inline Vector debias(const Vector& relation, const RezeMatrix& rm,
                     Index source) {
  require(relation.size() == rm.dim(), "debias: dimension mismatch");
  require(source >= 0 && source < rm.sources(), "debias: source out of range");
  Vector z = project(relation, rm.mean, rm.basis);
  z.array() *= rm.alphas.row(source).transpose().array();
  return reconstruct(z, rm.mean, rm.basis);
}

// Row-wise variant; source_ids[n] selects the alpha row for relations.row(n).
inline Matrix debias_batch(const Matrix& relations, const RezeMatrix& rm,
                           std::span<const std::uint32_t> source_ids) {
  require(relations.cols() == rm.dim(), "debias: dimension mismatch");
  require(static_cast<Index>(source_ids.size()) == relations.rows(),
          "debias: one source id per row required");
  Matrix z = project_rows(relations, rm.mean, rm.basis);
  for (Index n = 0; n < z.rows(); ++n) {
    const std::uint32_t s = source_ids[static_cast<std::size_t>(n)];
    require(static_cast<Index>(s) < rm.sources(), "debias: source out of range");
    z.row(n).array() *= rm.alphas.row(static_cast<Index>(s)).array();
  }
  return reconstruct_rows(z, rm.mean, rm.basis);
}

// Mean cosine misalignment between current relations and fixed debiased
// targets: (1/B) sum_i (1 - cos(r_i, rhat_i)).
inline double reze_loss(const Matrix& relations, const Matrix& targets) {
  require(relations.rows() == targets.rows() && relations.cols() == targets.cols(),
          "reze loss: shape mismatch");
  require(relations.rows() >= 1, "reze loss: empty batch");
  double total = 0.0;
  for (Index i = 0; i < relations.rows(); ++i) {
    const double nr = relations.row(i).norm();
    const double nt = targets.row(i).norm();
    if (nr == 0.0 || nt == 0.0)
      throw validation_error("reze loss: degenerate relation vector");
    total += 1.0 - relations.row(i).dot(targets.row(i)) / (nr * nt);
  }
  return total / static_cast<double>(relations.rows());
}

// Gradient of reze_loss with respect to the current relations. Targets are
// constants: no gradient flows into them.
//   d/dr_i = -(1/B) (rhat_i / (|r_i||rhat_i|) - cos_i * r_i / |r_i|^2)
inline Matrix reze_loss_grad(const Matrix& relations, const Matrix& targets) {
  require(relations.rows() == targets.rows() && relations.cols() == targets.cols(),
          "reze loss: shape mismatch");
  require(relations.rows() >= 1, "reze loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(relations.rows());
  Matrix grad(relations.rows(), relations.cols());
  for (Index i = 0; i < relations.rows(); ++i) {
    const double nr = relations.row(i).norm();
    const double nt = targets.row(i).norm();
    if (nr == 0.0 || nt == 0.0)
      throw validation_error("reze loss: degenerate relation vector");
    const double cosine = relations.row(i).dot(targets.row(i)) / (nr * nt);
    grad.row(i) = -inv_b * (targets.row(i) / (nr * nt) -
                            cosine * relations.row(i) / (nr * nr));
  }
  return grad;
}

}  // namespace reze
