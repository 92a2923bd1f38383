#pragma once

#include <cmath>

#include "reze/common.hpp"
#include "reze/debias.hpp"

namespace reze {

struct ObjectiveConfig {
  double temperature = 0.05;  // softmax temperature of the contrastive loss
  double reg_weight = 1.0;    // weight of the alignment regularizer

  void validate() const {
    require(temperature > 0.0, "objective config: temperature must be positive");
    require(reg_weight >= 0.0, "objective config: reg_weight must be nonnegative");
  }
};

namespace detail {

// Row-normalized copies plus the original row norms. Rejects zero rows.
inline Matrix normalized_rows(const Matrix& x, Vector& norms, const char* what) {
  norms = x.rowwise().norm();
  if (norms.minCoeff() == 0.0)
    throw validation_error(std::string(what) + ": degenerate embedding vector");
  return x.array().colwise() / norms.array();
}

}  // namespace detail

// Symmetric-free InfoNCE over a batch. Row i of the B x B similarity matrix
// holds cos(a_i, p_j) / temperature; the diagonal is the positive pair.
// Log-sum-exp is stabilized by row-max subtraction.
inline double info_nce(const Matrix& anchors, const Matrix& positives,
                       double temperature) {
  require(anchors.rows() == positives.rows() && anchors.cols() == positives.cols(),
          "info_nce: shape mismatch");
  require(anchors.rows() >= 1, "info_nce: empty batch");
  require(temperature > 0.0, "info_nce: temperature must be positive");
  Vector na, np;
  const Matrix ah = detail::normalized_rows(anchors, na, "info_nce");
  const Matrix ph = detail::normalized_rows(positives, np, "info_nce");
  const Matrix sims = (ah * ph.transpose()) / temperature;
  double total = 0.0;
  for (Index i = 0; i < sims.rows(); ++i) {
    const double row_max = sims.row(i).maxCoeff();
    const double lse =
        row_max + std::log((sims.row(i).array() - row_max).exp().sum());
    total += lse - sims(i, i);
  }
  return total / static_cast<double>(sims.rows());
}

// Gradients of info_nce with respect to the raw (unnormalized) anchors and
// positives. With P the row softmax of the similarity matrix and
// G = (P - I) / (B * temperature), the chain rule through row normalization
// gives
//   d/da_i = sum_j G_ij (phat_j - cos_ij ahat_i) / |a_i|
//   d/dp_j = sum_i G_ij (ahat_i - cos_ij phat_j) / |p_j|
inline void info_nce_grad(const Matrix& anchors, const Matrix& positives,
                          double temperature, Matrix& grad_anchors,
                          Matrix& grad_positives) {
  require(anchors.rows() == positives.rows() && anchors.cols() == positives.cols(),
          "info_nce: shape mismatch");
  require(anchors.rows() >= 1, "info_nce: empty batch");
  require(temperature > 0.0, "info_nce: temperature must be positive");
  const Index b = anchors.rows();
  Vector na, np;
  const Matrix ah = detail::normalized_rows(anchors, na, "info_nce");
  const Matrix ph = detail::normalized_rows(positives, np, "info_nce");
  const Matrix cosines = ah * ph.transpose();
  const Matrix sims = cosines / temperature;

  Matrix softmax(b, b);
  for (Index i = 0; i < b; ++i) {
    const double row_max = sims.row(i).maxCoeff();
    const Eigen::ArrayXd e = (sims.row(i).array() - row_max).exp();
    softmax.row(i) = (e / e.sum()).matrix();
  }
  const Matrix g =
      (softmax - Matrix::Identity(b, b)) / (static_cast<double>(b) * temperature);

  const Vector row_weight = (g.array() * cosines.array()).rowwise().sum();
  const Vector col_weight = (g.array() * cosines.array()).colwise().sum();
  grad_anchors =
      ((g * ph - row_weight.asDiagonal() * ah).array().colwise() / na.array())
          .matrix();
  grad_positives = ((g.transpose() * ah - col_weight.asDiagonal() * ph)
                        .array()
                        .colwise() /
                    np.array())
                       .matrix();
}

// One evaluation of the combined objective and its gradients. grad_relation
// is the unweighted alignment gradient; callers scale it by reg_weight when
// accumulating.
struct LossReport {
  double main = 0.0;      // contrastive term
  double reze = 0.0;      // alignment term, unweighted
  double combined = 0.0;  // main + reg_weight * reze
  Matrix grad_anchor;
  Matrix grad_positive;
  Matrix grad_relation;
};

inline LossReport compute_losses(const Matrix& anchors, const Matrix& positives,
                                 const Matrix& relations, const Matrix& targets,
                                 const ObjectiveConfig& config) {
  config.validate();
  LossReport report;
  report.main = info_nce(anchors, positives, config.temperature);
  info_nce_grad(anchors, positives, config.temperature, report.grad_anchor,
                report.grad_positive);
  report.reze = reze_loss(relations, targets);
  report.grad_relation = reze_loss_grad(relations, targets);
  report.combined = report.main + config.reg_weight * report.reze;
  return report;
}

}  // namespace reze
