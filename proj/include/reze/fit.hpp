#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "reze/common.hpp"
#include "reze/eigenspace.hpp"
#include "reze/relations.hpp"

namespace reze {

enum class Aggregation { median, mean };
enum class ShrinkMode { literal, signed_denominator };

inline std::string to_string(Aggregation a) {
  return a == Aggregation::median ? "median" : "mean";
}

inline std::string to_string(ShrinkMode m) {
  return m == ShrinkMode::literal ? "literal" : "signed";
}

struct FitConfig {
  double rho = 0.99;       // cumulative eigenvalue ratio for the active set
  double gamma = 1.0;      // scale of the dispersion threshold and band width
  double eta = 0.7;        // shrink strength
  double epsilon = 1e-8;   // degeneracy guard in thresholds and denominators
  double clip_lo = 0.0;    // shrink factor clamp, lower
  double clip_hi = 2.0;    // shrink factor clamp, upper
  Aggregation aggregation = Aggregation::median;
  ShrinkMode shrink_mode = ShrinkMode::literal;

  void validate() const {
    require(rho > 0.0 && rho <= 1.0, "fit config: rho must be in (0, 1]");
    require(gamma > 0.0, "fit config: gamma must be positive");
    require(eta >= 0.0, "fit config: eta must be nonnegative");
    require(epsilon > 0.0, "fit config: epsilon must be positive");
    require(clip_lo >= 0.0, "fit config: clip_lo must be nonnegative");
    require(clip_lo <= 1.0 && clip_hi >= 1.0,
            "fit config: clip bounds must bracket 1");
  }
};

// Robust per-dimension statistics of the per-source eigenspace means.
struct SourceStats {
  Matrix source_means;    // S x D, row s is the eigenspace mean of source s
  Vector reference;       // component-wise median (or mean) of source means
  Vector variant_scores;  // mean squared deviation of source means from the reference
  Vector band;            // per-dimension band width around the reference

  bool empty() const { return source_means.size() == 0; }
};

// The fitted artifact: centering vector, eigenbasis, active-dimension count,
// dispersion threshold and per-source diagonal shrink factors, plus the
// configuration and statistics that produced them.
struct RezeMatrix {
  Vector mean;
  EigenBasis basis;
  Index active = 0;        // number of leading eigendimensions considered
  double threshold = 0.0;  // global dispersion threshold
  Matrix alphas;           // S x D shrink factors, 1 = untouched
  FitConfig config;
  std::vector<std::string> source_names;
  SourceStats stats;        // retained for reporting; empty after file load
  bool normalized = true;   // relation halves were unit-normalized at fit time
  std::string input_digest; // digest of the fitting data; empty when untracked

  Index dim() const { return mean.size(); }
  Index sources() const { return alphas.rows(); }

  void validate() const {
    config.validate();
    const Index d = dim();
    require(d >= 2, "reze matrix: dimension must be at least 2");
    require(basis.dim() == d, "reze matrix: basis dimension mismatch");
    require(basis.eigenvalues.size() == d, "reze matrix: eigenvalue count mismatch");
    require(active >= 1 && active <= d, "reze matrix: active count out of range");
    require(alphas.cols() == d, "reze matrix: alpha width mismatch");
    require(alphas.rows() == static_cast<Index>(source_names.size()),
            "reze matrix: one alpha row per source required");
    require(mean.allFinite() && alphas.allFinite(),
            "reze matrix: non-finite entries");
    require((basis.vectors.transpose() * basis.vectors - Matrix::Identity(d, d))
                    .norm() < 1e-8,
            "reze matrix: basis is not orthonormal");
    for (Index j = 1; j < d; ++j)
      require(basis.eigenvalues[j] <= basis.eigenvalues[j - 1],
              "reze matrix: eigenvalues must be non-increasing");
    require(basis.eigenvalues.minCoeff() >= 0.0,
            "reze matrix: negative eigenvalue");
    for (Index s = 0; s < alphas.rows(); ++s) {
      for (Index j = 0; j < d; ++j) {
        const double a = alphas(s, j);
        require(a >= config.clip_lo && a <= config.clip_hi,
                "reze matrix: shrink factor outside clip bounds");
        if (j >= active)
          require(a == 1.0, "reze matrix: inactive dimension must keep alpha 1");
      }
    }
  }
};

namespace detail {

inline double median_of(std::vector<double> values) {
  const std::size_t n = values.size();
  std::sort(values.begin(), values.end());
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace detail

// Row s is the mean of the eigenspace rows belonging to source s.
inline Matrix source_means(const Matrix& z, std::span<const std::uint32_t> source_ids,
                           Index num_sources) {
  require(static_cast<Index>(source_ids.size()) == z.rows(),
          "source_means: one source id per row required");
  require(num_sources >= 1, "source_means: need at least one source");
  Matrix sums = Matrix::Zero(num_sources, z.cols());
  std::vector<Index> counts(static_cast<std::size_t>(num_sources), 0);
  for (Index n = 0; n < z.rows(); ++n) {
    const std::uint32_t s = source_ids[static_cast<std::size_t>(n)];
    require(static_cast<Index>(s) < num_sources, "source_means: source id out of range");
    sums.row(static_cast<Index>(s)) += z.row(n);
    ++counts[s];
  }
  for (Index s = 0; s < num_sources; ++s) {
    if (counts[static_cast<std::size_t>(s)] == 0)
      throw validation_error("source_means: source " + std::to_string(s) +
                             " has no samples");
    sums.row(s) /= static_cast<double>(counts[static_cast<std::size_t>(s)]);
  }
  return sums;
}

// Component-wise reference of the source means. Median mode sorts each column
// and takes the middle element (average of the two middles for even S).
inline Vector reference_vector(const Matrix& mu, Aggregation aggregation) {
  require(mu.rows() >= 1, "reference_vector: need at least one source");
  if (aggregation == Aggregation::mean) return mu.colwise().mean();
  Vector out(mu.cols());
  std::vector<double> column(static_cast<std::size_t>(mu.rows()));
  for (Index j = 0; j < mu.cols(); ++j) {
    for (Index s = 0; s < mu.rows(); ++s)
      column[static_cast<std::size_t>(s)] = mu(s, j);
    out[j] = detail::median_of(column);
  }
  return out;
}

// v_j = (1/S) sum_s (mu_{s,j} - m_j)^2
inline Vector task_variant_scores(const Matrix& mu, const Vector& m) {
  require(mu.cols() == m.size(), "task_variant_scores: shape mismatch");
  return (mu.rowwise() - m.transpose()).array().square().colwise().mean();
}

// Smallest k whose leading eigenvalues explain at least `rho` of the total
// variance.
inline Index select_active(const Vector& eigenvalues, double rho) {
  require(rho > 0.0 && rho <= 1.0, "select_active: rho must be in (0, 1]");
  require(eigenvalues.size() >= 1, "select_active: empty spectrum");
  for (Index j = 0; j < eigenvalues.size(); ++j) {
    require(eigenvalues[j] >= 0.0, "select_active: negative eigenvalue");
    if (j > 0)
      require(eigenvalues[j] <= eigenvalues[j - 1],
              "select_active: eigenvalues must be non-increasing");
  }
  const double total = eigenvalues.sum();
  if (total <= 0.0) throw validation_error("degenerate covariance");
  double cumulative = 0.0;
  for (Index j = 0; j < eigenvalues.size(); ++j) {
    cumulative += eigenvalues[j];
    if (cumulative >= rho * total) return j + 1;
  }
  return eigenvalues.size();
}

// theta = median(v_1..k) + gamma * (MAD(v_1..k) + epsilon), with MAD the
// median of absolute deviations from the median.
inline double global_threshold(const Vector& v, Index k, double gamma,
                               double epsilon) {
  require(k >= 1 && k <= v.size(), "global_threshold: active count out of range");
  std::vector<double> active(v.data(), v.data() + k);
  const double center = detail::median_of(active);
  for (double& value : active) value = std::abs(value - center);
  const double mad = detail::median_of(std::move(active));
  return center + gamma * (mad + epsilon);
}

// theta_j = gamma * (1/S) sum_s |mu_{s,j} - m_j|. Note this is a mean, not a
// median, of absolute deviations.
inline Vector band_widths(const Matrix& mu, const Vector& m, double gamma) {
  require(mu.cols() == m.size(), "band_widths: shape mismatch");
  return gamma * (mu.rowwise() - m.transpose()).array().abs().colwise().mean();
}

// Per-source shrink factors. An entry moves away from 1 only when its
// dimension is active with above-threshold dispersion and the source mean
// falls outside the band; the factor then retargets the coordinate toward the
// nearer band edge and is clamped to the configured range.
inline Matrix shrink_factors(const SourceStats& stats, Index k, double theta,
                             const FitConfig& config) {
  const Index num_sources = stats.source_means.rows();
  const Index dim = stats.source_means.cols();
  require(stats.variant_scores.size() == dim && stats.band.size() == dim &&
              stats.reference.size() == dim,
          "shrink_factors: inconsistent statistics");
  require(k >= 1 && k <= dim, "shrink_factors: active count out of range");

  Matrix alphas = Matrix::Ones(num_sources, dim);
  for (Index j = 0; j < k; ++j) {
    if (!(stats.variant_scores[j] > theta)) continue;
    for (Index s = 0; s < num_sources; ++s) {
      const double mu = stats.source_means(s, j);
      const double delta = mu - stats.reference[j];
      if (std::abs(delta) < stats.band[j]) continue;
      const double sign = delta > 0.0 ? 1.0 : (delta < 0.0 ? -1.0 : 0.0);
      const double edge = stats.reference[j] + sign * stats.band[j];
      double alpha;
      if (config.shrink_mode == ShrinkMode::signed_denominator &&
          std::abs(mu) > config.epsilon) {
        alpha = 1.0 + config.eta * (edge - mu) / mu;
      } else {
        alpha = 1.0 + config.eta * (edge - mu) / (std::abs(mu) + config.epsilon);
      }
      alphas(s, j) = std::clamp(alpha, config.clip_lo, config.clip_hi);
    }
  }
  return alphas;
}

// Offline fitting: center, decompose, project, then derive the robust
// statistics and shrink factors. The result is immutable and reusable across
// training runs on the same data.
inline RezeMatrix fit(const RelationSet& pooled, const FitConfig& config = {}) {
  config.validate();
  pooled.validate();
  require(pooled.sources() >= 2, "fit: need at least two sources");
  require(pooled.size() >= 2, "fit: need at least two samples");
  if (pooled.size() < pooled.dim)
    warn("covariance is rank-deficient; trailing eigenvalues clamped to zero");

  const CenteredRelations centered = global_center(pooled);
  const Matrix cov = covariance(centered.centered);

  RezeMatrix rm;
  rm.mean = centered.mean;
  rm.basis = symmetric_evd(cov);
  rm.config = config;
  rm.source_names = pooled.source_names;
  rm.normalized = pooled.normalized;

  const Matrix z = project_rows(pooled.relations, rm.mean, rm.basis);
  rm.stats.source_means = source_means(z, pooled.source_ids, pooled.sources());
  rm.stats.reference = reference_vector(rm.stats.source_means, config.aggregation);
  rm.stats.variant_scores =
      task_variant_scores(rm.stats.source_means, rm.stats.reference);
  rm.active = select_active(rm.basis.eigenvalues, config.rho);
  rm.threshold =
      global_threshold(rm.stats.variant_scores, rm.active, config.gamma, config.epsilon);
  rm.stats.band = band_widths(rm.stats.source_means, rm.stats.reference, config.gamma);
  rm.alphas = shrink_factors(rm.stats, rm.active, rm.threshold, config);
  rm.validate();
  return rm;
}

}  // namespace reze
