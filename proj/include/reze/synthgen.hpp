#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "reze/common.hpp"
#include "reze/relations.hpp"

namespace reze {

// Counter-based generator: output n (counting from 1) is the splitmix64
// finalizer applied to seed + n * 0x9E3779B97F4A7C15. The stream depends only
// on (seed, how many values were drawn), which makes fixtures reproducible
// across platforms and refactors.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in {0, ..., n-1}. Modulo bias is negligible for the small n used
  // here and keeps the draw count at exactly one per call.
  std::uint64_t uniform_index(std::uint64_t n) {
    require(n >= 1, "uniform_index: empty range");
    return next_u64() % n;
  }

  // Standard normal via Box-Muller on two uniforms:
  //   rad = sqrt(-2 ln(1 - u1)), z0 = rad cos(2 pi u2), z1 = rad sin(2 pi u2)
  // The second value is cached, so normals consume one uniform pair per two
  // outputs.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double rad = std::sqrt(-2.0 * std::log(1.0 - u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_ = rad * std::sin(angle);
    has_cached_ = true;
    return rad * std::cos(angle);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// A constant offset added to one relation coordinate for every sample of one
// source. Axes below dim address the anchor half, axes in [dim, 2*dim) the
// positive half.
struct PlantedOffset {
  Index source = 0;
  Index axis = 0;
  double offset = 0.0;
};

struct SynthConfig {
  Index dim = 16;                 // embedding dimension d; relations have 2d
  Index sources = 4;
  Index samples_per_source = 500;
  std::vector<double> base_scales;  // per-axis standard deviation, length d; empty means unit scale
  double pair_noise = 0.05;       // jitter between an anchor and its positive
  std::uint64_t seed = 1;
  std::vector<PlantedOffset> planted;
  std::vector<std::string> source_names;  // optional; defaults to source0..

  void validate() const {
    require(dim >= 1, "synth config: dim must be at least 1");
    require(sources >= 2, "synth config: need at least two sources");
    require(samples_per_source >= 1,
            "synth config: samples_per_source must be at least 1");
    require(base_scales.empty() ||
                static_cast<Index>(base_scales.size()) == dim,
            "synth config: base_scales must have one entry per dimension");
    for (double s : base_scales)
      require(s > 0.0, "synth config: base_scales must be positive");
    require(pair_noise >= 0.0, "synth config: pair_noise must be nonnegative");
    for (const PlantedOffset& po : planted) {
      require(po.source >= 0 && po.source < sources,
              "synth config: planted source out of range");
      require(po.axis >= 0 && po.axis < 2 * dim,
              "synth config: planted axis out of range");
      require(std::isfinite(po.offset), "synth config: planted offset not finite");
    }
    require(source_names.empty() ||
                static_cast<Index>(source_names.size()) == sources,
            "synth config: source_names must name every source");
  }
};

struct GroundTruth {
  std::vector<PlantedOffset> planted;
  Matrix mean_shift;  // S x 2d expected mean displacement per source
};

struct SynthResult {
  EmbeddingDump anchors;
  EmbeddingDump positives;
  GroundTruth truth;
};

// Draw order, fixed for reproducibility: for each source, for each sample,
// 2d base normals (anchor half then positive half) followed by d jitter
// normals. Jitter values are always drawn, even at pair_noise = 0, so the
// stream position does not depend on the noise setting. Planted offsets are
// added afterwards and outputs are quantized to float32 precision, matching
// what a dump file round-trip would store.
inline SynthResult generate(const SynthConfig& config) {
  config.validate();
  const Index d = config.dim;
  const Index n = config.samples_per_source;
  const Index total = config.sources * n;
  CounterRng rng(config.seed);

  SynthResult result;
  result.anchors.dim = d;
  result.anchors.vectors.resize(total, d);
  result.positives.dim = d;
  result.positives.vectors.resize(total, d);

  const auto scale = [&config](Index j) {
    return config.base_scales.empty() ? 1.0 : config.base_scales[static_cast<std::size_t>(j)];
  };
  for (Index s = 0; s < config.sources; ++s) {
    for (Index i = 0; i < n; ++i) {
      const Index row = s * n + i;
      for (Index j = 0; j < d; ++j)
        result.anchors.vectors(row, j) = scale(j) * rng.normal();
      for (Index j = 0; j < d; ++j)
        result.positives.vectors(row, j) = scale(j) * rng.normal();
      for (Index j = 0; j < d; ++j)
        result.positives.vectors(row, j) += config.pair_noise * rng.normal();
    }
  }

  result.truth.planted = config.planted;
  result.truth.mean_shift = Matrix::Zero(config.sources, 2 * d);
  for (const PlantedOffset& po : config.planted) {
    result.truth.mean_shift(po.source, po.axis) += po.offset;
    Matrix& half = po.axis < d ? result.anchors.vectors : result.positives.vectors;
    const Index col = po.axis < d ? po.axis : po.axis - d;
    half.block(po.source * n, col, n, 1).array() += po.offset;
  }

  result.anchors.vectors =
      result.anchors.vectors.cast<float>().cast<double>();
  result.positives.vectors =
      result.positives.vectors.cast<float>().cast<double>();

  std::vector<std::uint32_t> ids(static_cast<std::size_t>(total));
  std::vector<std::string> names;
  for (Index s = 0; s < config.sources; ++s) {
    names.push_back(config.source_names.empty()
                        ? "source" + std::to_string(s)
                        : config.source_names[static_cast<std::size_t>(s)]);
    for (Index i = 0; i < n; ++i)
      ids[static_cast<std::size_t>(s * n + i)] = static_cast<std::uint32_t>(s);
  }
  result.anchors.source_ids = ids;
  result.anchors.source_names = names;
  result.positives.source_ids = std::move(ids);
  result.positives.source_names = std::move(names);
  result.anchors.validate();
  result.positives.validate();
  return result;
}

// Replicate a dump as `copies` identical sources named copy0, copy1, ...
// Useful as a null fixture: identical sources have zero dispersion, so a fit
// on the result must leave every shrink factor at 1.
inline EmbeddingDump duplicate_as_sources(const EmbeddingDump& dump,
                                          Index copies) {
  dump.validate();
  require(copies >= 2, "duplicate_as_sources: need at least two copies");
  const Index n = dump.size();
  EmbeddingDump out;
  out.dim = dump.dim;
  out.vectors.resize(copies * n, dump.dim);
  out.source_ids.resize(static_cast<std::size_t>(copies * n));
  for (Index c = 0; c < copies; ++c) {
    out.vectors.middleRows(c * n, n) = dump.vectors;
    out.source_names.push_back("copy" + std::to_string(c));
    for (Index i = 0; i < n; ++i)
      out.source_ids[static_cast<std::size_t>(c * n + i)] =
          static_cast<std::uint32_t>(c);
  }
  out.validate();
  return out;
}

}  // namespace reze
