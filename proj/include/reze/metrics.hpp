#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "reze/common.hpp"
#include "reze/eigenspace.hpp"
#include "reze/fit.hpp"

namespace reze {

// Isotropy of a point cloud in [0, 1]: 1 for equal variance in every
// direction, 0 for variance concentrated on a single axis. Computed from the
// PCA variance vector (the covariance eigenvalues) in five fixed steps:
//   sigma_hat = sqrt(D) * sigma / |sigma|
//   delta     = |sigma_hat - 1| / sqrt(2 (D - sqrt(D)))
//   phi       = (D - delta^2 (D - sqrt(D)))^2 / D^2
//   score     = (D * phi - 1) / (D - 1)
// then clamped to [0, 1] against rounding.
inline double isoscore(const Matrix& points) {
  require(points.cols() >= 2, "isoscore: need at least two dimensions");
  require(points.rows() >= 2, "isoscore: need at least two points");
  const double d = static_cast<double>(points.cols());
  const Matrix centered = points.rowwise() - points.colwise().mean();
  const Vector sigma = symmetric_evd(covariance(centered)).eigenvalues;
  const double norm = sigma.norm();
  if (norm == 0.0) throw validation_error("isoscore: degenerate point set");
  const Vector sigma_hat = std::sqrt(d) * sigma / norm;
  const double delta =
      (sigma_hat.array() - 1.0).matrix().norm() / std::sqrt(2.0 * (d - std::sqrt(d)));
  const double phi = std::pow(d - delta * delta * (d - std::sqrt(d)), 2) / (d * d);
  const double score = (d * phi - 1.0) / (d - 1.0);
  return std::clamp(score, 0.0, 1.0);
}

struct IsotropyResult {
  double score = 0.0;
  Index dim = 0;
  Index samples = 0;
};

inline IsotropyResult isoscore_result(const Matrix& points) {
  return {isoscore(points), points.cols(), points.rows()};
}

// Average row-wise Euclidean distance between two point sets in
// correspondence.
inline double mean_displacement(const Matrix& before, const Matrix& after) {
  require(before.rows() == after.rows() && before.cols() == after.cols(),
          "mean_displacement: shape mismatch");
  require(before.rows() >= 1, "mean_displacement: empty set");
  return (before - after).rowwise().norm().mean();
}

// Source dispersion before and after an intervention, measured in the fitted
// eigenbasis. Both sets are projected with the fitted mean and basis; the
// per-source means, reference and variant scores are recomputed per set so
// the two columns are comparable. A dimension is flagged when it is active
// and its pre-intervention score exceeds the fitted threshold.
struct DispersionReport {
  Vector eigenvalues;
  Vector v_before;
  Vector v_after;
  Matrix delta_before;  // S x D deviations of source means from the reference
  Matrix delta_after;
  Vector ratio;         // v_after / v_before per dimension, 0/0 taken as 1
  std::vector<bool> flagged;
  Index active = 0;
  double threshold = 0.0;
  Index flagged_count = 0;
  double flagged_before = 0.0;  // sum of v_before over flagged dimensions
  double flagged_after = 0.0;   // sum of v_after over flagged dimensions
  double reduction = 1.0;       // flagged_after / flagged_before, 1 when nothing is flagged
};

namespace detail {

inline void set_variant_scores(const Matrix& relations,
                               std::span<const std::uint32_t> source_ids,
                               const RezeMatrix& rm, Vector& v, Matrix& delta) {
  const Matrix z = project_rows(relations, rm.mean, rm.basis);
  const Matrix mu = source_means(z, source_ids, rm.sources());
  const Vector m = reference_vector(mu, rm.config.aggregation);
  v = task_variant_scores(mu, m);
  delta = mu.rowwise() - m.transpose();
}

}  // namespace detail

inline DispersionReport dispersion_report(const RezeMatrix& rm,
                                          const Matrix& before,
                                          std::span<const std::uint32_t> before_ids,
                                          const Matrix& after,
                                          std::span<const std::uint32_t> after_ids) {
  require(before.cols() == rm.dim() && after.cols() == rm.dim(),
          "dispersion_report: dimension mismatch");
  require(before.rows() == after.rows() &&
              std::equal(before_ids.begin(), before_ids.end(),
                         after_ids.begin(), after_ids.end()),
          "dispersion_report: before and after sets are not row-aligned");
  DispersionReport report;
  report.eigenvalues = rm.basis.eigenvalues;
  detail::set_variant_scores(before, before_ids, rm, report.v_before,
                             report.delta_before);
  detail::set_variant_scores(after, after_ids, rm, report.v_after,
                             report.delta_after);
  report.active = rm.active;
  report.threshold = rm.threshold;
  report.ratio.resize(rm.dim());
  for (Index j = 0; j < rm.dim(); ++j)
    report.ratio[j] = report.v_before[j] == 0.0 && report.v_after[j] == 0.0
                          ? 1.0
                          : report.v_after[j] / report.v_before[j];
  report.flagged.assign(static_cast<std::size_t>(rm.dim()), false);
  for (Index j = 0; j < rm.active; ++j) {
    if (report.v_before[j] > rm.threshold) {
      report.flagged[static_cast<std::size_t>(j)] = true;
      ++report.flagged_count;
      report.flagged_before += report.v_before[j];
      report.flagged_after += report.v_after[j];
    }
  }
  if (report.flagged_before > 0.0)
    report.reduction = report.flagged_after / report.flagged_before;
  return report;
}

// ZCA whitening fitted on a point set: transform = W diag(lambda)^(-1/2) W^T
// with eigenvalues floored at 1e-12 so rank-deficient directions stay finite.
struct Whitening {
  Vector mean;
  Matrix transform;
};

inline Whitening whitening_fit(const Matrix& points) {
  require(points.rows() >= 2, "whitening_fit: need at least two points");
  Whitening w;
  w.mean = points.colwise().mean();
  const Matrix centered = points.rowwise() - w.mean.transpose();
  const EigenBasis basis = symmetric_evd(covariance(centered));
  const Vector inv_sqrt =
      basis.eigenvalues.array().max(1e-12).inverse().sqrt();
  w.transform = basis.vectors * inv_sqrt.asDiagonal() * basis.vectors.transpose();
  return w;
}

inline Vector whitening_apply(const Vector& h, const Whitening& w) {
  require(h.size() == w.mean.size(), "whitening_apply: dimension mismatch");
  return w.transform * (h - w.mean);
}

inline Matrix whitening_apply_rows(const Matrix& points, const Whitening& w) {
  require(points.cols() == w.mean.size(), "whitening_apply: dimension mismatch");
  return (points.rowwise() - w.mean.transpose()) * w.transform.transpose();
}

// Coordinates of each point along the top two principal axes, for quick
// scatter summaries.
inline Matrix pca2(const Matrix& points) {
  require(points.cols() >= 2, "pca2: need at least two dimensions");
  require(points.rows() >= 2, "pca2: need at least two points");
  const Vector mean = points.colwise().mean();
  const Matrix centered = points.rowwise() - mean.transpose();
  const EigenBasis basis = symmetric_evd(covariance(centered));
  return centered * basis.vectors.leftCols(2);
}

}  // namespace reze
