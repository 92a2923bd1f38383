#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "reze/common.hpp"
#include "reze/debias.hpp"
#include "reze/metrics.hpp"
#include "reze/objectives.hpp"
#include "reze/relations.hpp"
#include "reze/synthgen.hpp"

namespace reze {

// Minimal trainable map y = W x + b used by the toy loop.
struct LinearEncoder {
  Matrix weight;
  Vector bias;

  Index dim() const { return weight.rows(); }

  static LinearEncoder identity(Index dim) {
    require(dim >= 1, "encoder: dimension must be positive");
    return {Matrix::Identity(dim, dim), Vector::Zero(dim)};
  }

  // Identity plus small seeded noise on every weight and bias entry. Draw
  // order: weight entries row by row, then bias entries.
  static LinearEncoder perturbed_identity(Index dim, double scale,
                                          std::uint64_t seed) {
    LinearEncoder enc = identity(dim);
    CounterRng rng(seed);
    for (Index i = 0; i < dim; ++i)
      for (Index j = 0; j < dim; ++j) enc.weight(i, j) += scale * rng.normal();
    for (Index i = 0; i < dim; ++i) enc.bias[i] += scale * rng.normal();
    return enc;
  }

  Vector apply(const Vector& x) const { return weight * x + bias; }

  Matrix apply_rows(const Matrix& x) const {
    return (x * weight.transpose()).rowwise() + bias.transpose();
  }
};

enum class EncoderInit { identity, perturbed };

struct TrainConfig {
  Index steps = 500;
  Index batch_size = 32;
  double learning_rate = 0.05;
  ObjectiveConfig objective;
  std::uint64_t shuffle_seed = 1;
  bool mixed_batches = true;  // false keeps each batch within one source
  EncoderInit init = EncoderInit::identity;
  double init_scale = 0.01;
  std::uint64_t init_seed = 1;

  void validate() const {
    require(steps >= 1, "train config: steps must be at least 1");
    require(batch_size >= 2,
            "train config: batch_size must be at least 2 for in-batch negatives");
    require(learning_rate >= 0.0,
            "train config: learning_rate must be nonnegative");
    require(init_scale >= 0.0, "train config: init_scale must be nonnegative");
    objective.validate();
  }
};

struct StepRecord {
  Index step = 0;
  double main = 0.0;
  double reze = 0.0;
  double combined = 0.0;
};

struct TrainResult {
  LinearEncoder encoder;
  std::vector<StepRecord> history;
  double isoscore_initial = 0.0;   // of the relation set under the initial encoder
  double isoscore_final = 0.0;     // of the relation set under the final encoder
  double displacement_initial = 0.0;  // mean distance from the reference relations
  double displacement_final = 0.0;
  DispersionReport dispersion;  // reference relations vs final relations
};

// Sample visit order for one epoch: a Fisher-Yates shuffle drawn from a
// counter-based stream seeded with shuffle_seed + epoch. Exposed so tests can
// reproduce the batching exactly.
inline std::vector<Index> epoch_order(Index n, std::uint64_t shuffle_seed,
                                      Index epoch) {
  require(n >= 1, "epoch_order: empty dataset");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  CounterRng rng(shuffle_seed + static_cast<std::uint64_t>(epoch));
  for (Index i = n - 1; i >= 1; --i) {
    const Index j = static_cast<Index>(
        rng.uniform_index(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(j)]);
  }
  return order;
}

namespace detail {

// Gradient of a normalized vector's downstream gradient with respect to the
// raw vector: g -> (g - (g . vhat) vhat) / |v|.
inline Vector backprop_normalize(const Vector& grad, const Vector& raw) {
  const double norm = raw.norm();
  require(norm > 0.0, "train: degenerate embedding vector");
  const Vector unit = raw / norm;
  return (grad - grad.dot(unit) * unit) / norm;
}

struct BatchGrads {
  double main = 0.0;
  double reze = 0.0;
  double combined = 0.0;
  Matrix grad_weight;
  Vector grad_bias;
};

}  // namespace detail

// Loss and encoder gradients for one batch of raw embeddings against fixed
// debiased targets. When reg_weight is zero the alignment term contributes
// nothing to the gradients, not even a zero-valued arithmetic pass, so a run
// with reg_weight 0 reproduces a plain contrastive loop bit for bit.
inline detail::BatchGrads batch_loss_and_grads(
    const LinearEncoder& encoder, const Matrix& raw_anchors,
    const Matrix& raw_positives, const Matrix& targets, bool normalized,
    const ObjectiveConfig& objective) {
  const Index b = raw_anchors.rows();
  const Index d = encoder.dim();
  require(raw_positives.rows() == b, "train: batch shape mismatch");
  require(targets.rows() == b && targets.cols() == 2 * d,
          "train: target shape mismatch");

  const Matrix anchors = encoder.apply_rows(raw_anchors);
  const Matrix positives = encoder.apply_rows(raw_positives);

  Matrix relations(b, 2 * d);
  relations.leftCols(d) = anchors;
  relations.rightCols(d) = positives;
  if (normalized) detail::normalize_halves(relations, d);

  detail::BatchGrads out;
  out.main = info_nce(anchors, positives, objective.temperature);
  out.reze = reze_loss(relations, targets);
  out.combined = out.main + objective.reg_weight * out.reze;

  Matrix grad_anchors, grad_positives;
  info_nce_grad(anchors, positives, objective.temperature, grad_anchors,
                grad_positives);

  if (objective.reg_weight != 0.0) {
    const Matrix grad_relations =
        objective.reg_weight * reze_loss_grad(relations, targets);
    for (Index i = 0; i < b; ++i) {
      Vector ga = grad_relations.row(i).head(d).transpose();
      Vector gp = grad_relations.row(i).tail(d).transpose();
      if (normalized) {
        ga = detail::backprop_normalize(ga, anchors.row(i).transpose());
        gp = detail::backprop_normalize(gp, positives.row(i).transpose());
      }
      grad_anchors.row(i) += ga.transpose();
      grad_positives.row(i) += gp.transpose();
    }
  }

  out.grad_weight = grad_anchors.transpose() * raw_anchors +
                    grad_positives.transpose() * raw_positives;
  out.grad_bias =
      grad_anchors.colwise().sum() + grad_positives.colwise().sum();
  return out;
}

// Toy training loop. The reference relations come from the frozen reference
// encoder (identity unless one is supplied); their debiased versions are
// computed once and serve as fixed alignment targets throughout. Batches are
// drawn from a fresh shuffle each epoch and never span an epoch boundary;
// with mixed_batches off the shuffled order is stably sorted by source first
// so each batch stays within one source.
inline TrainResult train(const EmbeddingDump& anchors,
                         const EmbeddingDump& positives, const RezeMatrix& rm,
                         const TrainConfig& config,
                         std::optional<LinearEncoder> init = {},
                         std::optional<LinearEncoder> reference_encoder = {}) {
  config.validate();
  const Index d = anchors.dim;
  if (reference_encoder) {
    require(reference_encoder->weight.rows() == d &&
                reference_encoder->weight.cols() == d &&
                reference_encoder->bias.size() == d,
            "train: reference encoder dimension mismatch");
  }
  const auto reference_view = [&](const EmbeddingDump& dump) {
    EmbeddingDump out = dump;
    if (reference_encoder)
      out.vectors = reference_encoder->apply_rows(dump.vectors);
    return out;
  };
  const RelationSet reference = build_relations(
      reference_view(anchors), reference_view(positives), rm.normalized);
  require(rm.dim() == reference.dim, "train: relation dimension mismatch");
  require(rm.sources() == reference.sources(), "train: source count mismatch");
  const Index n = reference.size();

  const Matrix targets =
      debias_batch(reference.relations, rm, reference.source_ids);

  TrainResult result;
  if (init) {
    require(init->weight.rows() == d && init->weight.cols() == d &&
                init->bias.size() == d,
            "train: initial encoder dimension mismatch");
    result.encoder = std::move(*init);
  } else {
    result.encoder = config.init == EncoderInit::identity
                         ? LinearEncoder::identity(d)
                         : LinearEncoder::perturbed_identity(
                               d, config.init_scale, config.init_seed);
  }
  result.history.reserve(static_cast<std::size_t>(config.steps));

  const auto encode_relations = [&](const LinearEncoder& enc) {
    const RelationSet current =
        build_relations({anchors.dim, enc.apply_rows(anchors.vectors),
                         anchors.source_ids, anchors.source_names},
                        {positives.dim, enc.apply_rows(positives.vectors),
                         positives.source_ids, positives.source_names},
                        rm.normalized);
    return current.relations;
  };

  const Matrix initial_relations = encode_relations(result.encoder);
  result.isoscore_initial = isoscore(initial_relations);
  result.displacement_initial =
      mean_displacement(reference.relations, initial_relations);

  Index step = 0;
  Index epoch = 0;
  while (step < config.steps) {
    std::vector<Index> order = epoch_order(n, config.shuffle_seed, epoch);
    if (!config.mixed_batches) {
      std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return reference.source_ids[static_cast<std::size_t>(a)] <
               reference.source_ids[static_cast<std::size_t>(b)];
      });
    }
    for (Index start = 0; start < n && step < config.steps;
         start += config.batch_size) {
      const Index b = std::min(config.batch_size, n - start);
      Matrix xa(b, d), xp(b, d), tb(b, 2 * d);
      for (Index i = 0; i < b; ++i) {
        const Index row = order[static_cast<std::size_t>(start + i)];
        xa.row(i) = anchors.vectors.row(row);
        xp.row(i) = positives.vectors.row(row);
        tb.row(i) = targets.row(row);
      }
      const detail::BatchGrads grads = batch_loss_and_grads(
          result.encoder, xa, xp, tb, rm.normalized, config.objective);
      if (!std::isfinite(grads.combined) || !grads.grad_weight.allFinite() ||
          !grads.grad_bias.allFinite())
        throw validation_error("train: non-finite loss at step " +
                               std::to_string(step));
      result.encoder.weight -= config.learning_rate * grads.grad_weight;
      result.encoder.bias -= config.learning_rate * grads.grad_bias;
      result.history.push_back({step, grads.main, grads.reze, grads.combined});
      ++step;
    }
    ++epoch;
  }

  const Matrix final_relations = encode_relations(result.encoder);
  result.isoscore_final = isoscore(final_relations);
  result.displacement_final =
      mean_displacement(reference.relations, final_relations);
  result.dispersion =
      dispersion_report(rm, reference.relations, reference.source_ids,
                        final_relations, reference.source_ids);
  return result;
}

// Central finite differences over every encoder parameter against the
// analytic gradient of the combined batch loss. Returns the max-norm of the
// difference relative to the larger of the two gradients.
inline double encoder_grad_check(const LinearEncoder& encoder,
                                 const Matrix& raw_anchors,
                                 const Matrix& raw_positives,
                                 const Matrix& targets, bool normalized,
                                 const ObjectiveConfig& objective,
                                 double step = 1e-5) {
  const detail::BatchGrads analytic = batch_loss_and_grads(
      encoder, raw_anchors, raw_positives, targets, normalized, objective);
  const Index d = encoder.dim();
  const auto loss_at = [&](const LinearEncoder& enc) {
    return batch_loss_and_grads(enc, raw_anchors, raw_positives, targets,
                                normalized, objective)
        .combined;
  };
  Matrix fd_weight(d, d);
  Vector fd_bias(d);
  LinearEncoder probe = encoder;
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      const double saved = probe.weight(i, j);
      probe.weight(i, j) = saved + step;
      const double up = loss_at(probe);
      probe.weight(i, j) = saved - step;
      const double down = loss_at(probe);
      probe.weight(i, j) = saved;
      fd_weight(i, j) = (up - down) / (2.0 * step);
    }
  }
  for (Index i = 0; i < d; ++i) {
    const double saved = probe.bias[i];
    probe.bias[i] = saved + step;
    const double up = loss_at(probe);
    probe.bias[i] = saved - step;
    const double down = loss_at(probe);
    probe.bias[i] = saved;
    fd_bias[i] = (up - down) / (2.0 * step);
  }
  const double diff =
      std::max((analytic.grad_weight - fd_weight).cwiseAbs().maxCoeff(),
               (analytic.grad_bias - fd_bias).cwiseAbs().maxCoeff());
  const double scale =
      std::max({analytic.grad_weight.cwiseAbs().maxCoeff(),
                analytic.grad_bias.cwiseAbs().maxCoeff(),
                fd_weight.cwiseAbs().maxCoeff(), fd_bias.cwiseAbs().maxCoeff(),
                1e-12});
  return diff / scale;
}

}  // namespace reze
