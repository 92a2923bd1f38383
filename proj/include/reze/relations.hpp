#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "reze/common.hpp"

namespace reze {

// A set of fixed-width embedding vectors, each row tagged with a source
// index. On disk vectors are float32; in memory everything is widened to
// double.
struct EmbeddingDump {
  Index dim = 0;
  Matrix vectors;  // N x dim
  std::vector<std::uint32_t> source_ids;
  std::vector<std::string> source_names;

  Index size() const { return vectors.rows(); }
  Index sources() const { return static_cast<Index>(source_names.size()); }

  void validate() const {
    require(dim >= 1, "embedding dump: dimension must be positive");
    require(vectors.rows() >= 1, "embedding dump: empty sample set");
    require(vectors.cols() == dim, "embedding dump: vector width mismatch");
    require(static_cast<Index>(source_ids.size()) == vectors.rows(),
            "embedding dump: one source id per row required");
    require(vectors.allFinite(), "embedding dump: non-finite vector entries");
    for (std::uint32_t id : source_ids)
      require(id < source_names.size(), "embedding dump: source id out of range");
  }
};

// Pooled relation vectors (anchor and positive halves concatenated), one
// source index per row.
struct RelationSet {
  Index dim = 0;  // D = 2 * embedding dim
  Matrix relations;  // N x D
  std::vector<std::uint32_t> source_ids;
  std::vector<std::string> source_names;
  bool normalized = true;

  Index size() const { return relations.rows(); }
  Index sources() const { return static_cast<Index>(source_names.size()); }

  void validate() const {
    require(dim >= 2 && dim % 2 == 0, "relation set: dimension must be even");
    require(relations.cols() == dim, "relation set: row width mismatch");
    require(static_cast<Index>(source_ids.size()) == relations.rows(),
            "relation set: one source id per row required");
    require(relations.allFinite(), "relation set: non-finite entries");
    for (std::uint32_t id : source_ids)
      require(id < source_names.size(), "relation set: source id out of range");
  }
};

struct CenteredRelations {
  Vector mean;     // global mean u over all pooled rows
  Matrix centered;  // rows minus u
};

namespace detail {

// Normalizes each row half to unit length in place. Zero rows pass through
// unchanged with a warning.
inline void normalize_halves(Matrix& rows, Index half) {
  for (Index n = 0; n < rows.rows(); ++n) {
    for (Index h = 0; h < 2; ++h) {
      auto seg = rows.row(n).segment(h * half, half);
      const double norm = seg.norm();
      if (norm == 0.0) {
        warn("zero-norm vector passed through normalization (row " +
             std::to_string(n) + ")");
      } else {
        seg /= norm;
      }
    }
  }
}

}  // namespace detail

// Row i of the result is [a_i ; p_i]. With `normalize` set, each half is
// scaled to unit 2-norm independently before concatenation.
inline RelationSet build_relations(const EmbeddingDump& anchors,
                                   const EmbeddingDump& positives,
                                   bool normalize = true) {
  anchors.validate();
  positives.validate();
  require(anchors.size() == positives.size(),
          "build_relations: sample count mismatch between anchors and positives");
  require(anchors.dim == positives.dim,
          "build_relations: dimension mismatch between anchors and positives");
  require(anchors.source_ids == positives.source_ids,
          "build_relations: source_ids mismatch between anchors and positives");

  RelationSet out;
  out.dim = 2 * anchors.dim;
  out.relations.resize(anchors.size(), out.dim);
  out.relations.leftCols(anchors.dim) = anchors.vectors;
  out.relations.rightCols(anchors.dim) = positives.vectors;
  out.source_ids = anchors.source_ids;
  out.source_names = anchors.source_names;
  out.normalized = normalize;
  if (normalize) detail::normalize_halves(out.relations, anchors.dim);
  return out;
}

// Concatenates per-source relation sets in input order. Source indices are
// reindexed against the concatenated source table.
inline RelationSet pool_sources(std::span<const RelationSet> per_source) {
  require(!per_source.empty(), "pool_sources: at least one input required");
  const Index dim = per_source.front().dim;
  const bool normalized = per_source.front().normalized;
  Index total_rows = 0;
  Index total_sources = 0;
  for (const RelationSet& set : per_source) {
    set.validate();
    require(set.dim == dim, "pool_sources: dimension mismatch between inputs");
    require(set.normalized == normalized,
            "pool_sources: normalized flag mismatch between inputs");
    total_rows += set.size();
    total_sources += set.sources();
  }
  if (total_sources < 2)
    warn("pooled set has a single source; task-variant statistics need S >= 2");

  RelationSet out;
  out.dim = dim;
  out.normalized = normalized;
  out.relations.resize(total_rows, dim);
  out.source_ids.reserve(static_cast<std::size_t>(total_rows));
  out.source_names.reserve(static_cast<std::size_t>(total_sources));
  Index row = 0;
  std::uint32_t source_offset = 0;
  for (const RelationSet& set : per_source) {
    out.relations.middleRows(row, set.size()) = set.relations;
    for (std::uint32_t id : set.source_ids)
      out.source_ids.push_back(id + source_offset);
    out.source_names.insert(out.source_names.end(), set.source_names.begin(),
                            set.source_names.end());
    row += set.size();
    source_offset += static_cast<std::uint32_t>(set.sources());
  }
  return out;
}

// Global mean over all pooled rows (sources are not weighted separately) and
// the centered matrix.
inline CenteredRelations global_center(const RelationSet& pooled) {
  pooled.validate();
  CenteredRelations out;
  out.mean = pooled.relations.colwise().mean();
  out.centered = pooled.relations.rowwise() - out.mean.transpose();
  return out;
}

}  // namespace reze
