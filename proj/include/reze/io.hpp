#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "reze/common.hpp"
#include "reze/fit.hpp"
#include "reze/metrics.hpp"
#include "reze/relations.hpp"
#include "reze/synthgen.hpp"
#include "reze/trainer.hpp"

// Binary formats. All integers and floats are little-endian.
//
// Embedding dump (magic "REZD"):
//   "REZD"            4 bytes
//   version           u32, currently 1
//   N                 u32, number of vectors
//   d                 u32, embedding dimension
//   S                 u32, number of sources
//   S source names    u16 byte length + UTF-8 bytes each
//   N source ids      u32 each, values in [0, S)
//   N*d coordinates   f32 row-major
//
// Fit artifact (magic "REZM"):
//   "REZM"            4 bytes
//   version           u32, currently 1
//   header_len        u32
//   header            UTF-8 "key: value\n" lines in this fixed order:
//                     dim, sources, active, theta, rho, gamma, eta, epsilon,
//                     clip_lo, clip_hi, aggregation, shrink_mode, normalized,
//                     input_digest, then one "source" line per source name.
//                     Floats use the shortest round-trip decimal form.
//   mean              f64 x dim
//   eigenvalues       f64 x dim, non-increasing
//   eigenvectors      f64 x dim*dim, column-major
//   alphas            f64 x sources*dim, row-major
//
// Writers emit no timestamps and iterate in fixed orders, so rewriting the
// same data produces byte-identical files.

namespace reze {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buffer_.push_back(static_cast<char>(v)); }

  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }

  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v));
    u16(static_cast<std::uint16_t>(v >> 16));
  }

  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& v) { buffer_ += v; }

  const std::string& str() const { return buffer_; }
  std::string take() { return std::move(buffer_); }

 private:
  std::string buffer_;
};

// Sequential reader that reports the byte offset of any failure.
class ByteReader {
 public:
  ByteReader(const std::string& data, std::string what)
      : data_(data), what_(std::move(what)) {}

  std::size_t offset() const { return offset_; }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[offset_++]);
  }

  std::uint16_t u16() { return static_cast<std::uint16_t>(uint_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint_le(4)); }
  std::uint64_t u64() { return uint_le(8); }

  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string bytes(std::size_t count) {
    need(count);
    std::string out = data_.substr(offset_, count);
    offset_ += count;
    return out;
  }

  void expect_end() const {
    if (offset_ != data_.size())
      throw io_error(what_ + ": trailing bytes at byte " +
                     std::to_string(offset_));
  }

 private:
  // Checks the full field width before consuming anything, so a truncated
  // file reports the offset of the field that was cut.
  std::uint64_t uint_le(std::size_t count) {
    need(count);
    std::uint64_t v = 0;
    for (std::size_t i = count; i-- > 0;)
      v = (v << 8) | static_cast<std::uint8_t>(data_[offset_ + i]);
    offset_ += count;
    return v;
  }

  void need(std::size_t count) const {
    if (offset_ + count > data_.size())
      throw io_error(what_ + ": unexpected end of file at byte " +
                     std::to_string(data_.size()) + " while reading " +
                     std::to_string(count) + " bytes at byte " +
                     std::to_string(offset_));
  }

  const std::string& data_;
  std::string what_;
  std::size_t offset_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (in.bad()) throw io_error("read failed on " + path);
  return data;
}

// Write through a temporary file in the same directory, then rename, so a
// crash never leaves a half-written artifact at the target path.
inline void atomic_write_file(const std::string& path, const std::string& data) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + tmp + " for writing");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw io_error("write failed on " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw io_error("cannot rename " + tmp + " to " + path + ": " +
                         ec.message());
}

inline std::string digest_bytes(const std::string& data,
                                std::uint64_t state = 0xcbf29ce484222325ULL) {
  return digest_hex(fnv1a64(data.data(), data.size(), state));
}

// Digest of a fitting input pair: anchors bytes chained into positives bytes.
inline std::string digest_pair(const std::string& anchors_bytes,
                               const std::string& positives_bytes) {
  const std::uint64_t first =
      fnv1a64(anchors_bytes.data(), anchors_bytes.size());
  return digest_hex(
      fnv1a64(positives_bytes.data(), positives_bytes.size(), first));
}

inline std::string serialize_dump(const EmbeddingDump& dump) {
  dump.validate();
  ByteWriter w;
  w.bytes("REZD");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(dump.size()));
  w.u32(static_cast<std::uint32_t>(dump.dim));
  w.u32(static_cast<std::uint32_t>(dump.sources()));
  for (const std::string& name : dump.source_names) {
    require(name.size() <= 0xffff, "rezd: source name too long");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
  }
  for (std::uint32_t id : dump.source_ids) w.u32(id);
  for (Index i = 0; i < dump.vectors.rows(); ++i)
    for (Index j = 0; j < dump.vectors.cols(); ++j)
      w.f32(static_cast<float>(dump.vectors(i, j)));
  return w.take();
}

inline EmbeddingDump parse_dump(const std::string& data) {
  ByteReader r(data, "rezd");
  if (r.bytes(4) != "REZD") throw io_error("rezd: bad magic at byte 0");
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw io_error("rezd: unsupported version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  const std::uint32_t d = r.u32();
  const std::uint32_t s = r.u32();
  EmbeddingDump dump;
  dump.dim = static_cast<Index>(d);
  for (std::uint32_t i = 0; i < s; ++i) {
    const std::uint16_t len = r.u16();
    dump.source_names.push_back(r.bytes(len));
  }
  dump.source_ids.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) dump.source_ids[i] = r.u32();
  dump.vectors.resize(static_cast<Index>(n), static_cast<Index>(d));
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j)
      dump.vectors(static_cast<Index>(i), static_cast<Index>(j)) =
          static_cast<double>(r.f32());
  r.expect_end();
  try {
    dump.validate();
  } catch (const validation_error& e) {
    // A structurally readable file with inconsistent contents is still a
    // format violation, so it surfaces through the I/O error channel.
    throw io_error(std::string("rezd: ") + e.what());
  }
  return dump;
}

inline void write_dump(const std::string& path, const EmbeddingDump& dump) {
  atomic_write_file(path, serialize_dump(dump));
}

inline EmbeddingDump read_dump(const std::string& path) {
  return parse_dump(read_file(path));
}

namespace detail {

inline void header_line(std::string& header, const char* key,
                        const std::string& value) {
  header += key;
  header += ": ";
  header += value;
  header += '\n';
}

// Consumes one "key: value" line and enforces the expected key.
class HeaderParser {
 public:
  explicit HeaderParser(const std::string& text) : text_(text) {}

  bool done() const { return pos_ >= text_.size(); }

  std::pair<std::string, std::string> next() {
    const std::size_t eol = text_.find('\n', pos_);
    if (eol == std::string::npos)
      throw io_error("rzm: unterminated header line");
    const std::string line = text_.substr(pos_, eol - pos_);
    pos_ = eol + 1;
    const std::size_t sep = line.find(": ");
    if (sep == std::string::npos)
      throw io_error("rzm: malformed header line '" + line + "'");
    return {line.substr(0, sep), line.substr(sep + 2)};
  }

  std::string expect(const char* key) {
    auto [k, v] = next();
    if (k != key)
      throw io_error("rzm: expected header key '" + std::string(key) +
                     "', found '" + k + "'");
    return v;
  }

 private:
  const std::string& text_;
  std::size_t pos_ = 0;
};

inline std::uint64_t parse_uint(const std::string& text, const char* what) {
  std::uint64_t value = 0;
  const auto [ptr, ec] =
      std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw io_error(std::string("rzm: bad ") + what + " '" + text + "'");
  return value;
}

}  // namespace detail

inline std::string serialize_reze_matrix(const RezeMatrix& rm) {
  rm.validate();
  const Index d = rm.dim();
  const Index s = rm.sources();

  std::string header;
  detail::header_line(header, "dim", std::to_string(d));
  detail::header_line(header, "sources", std::to_string(s));
  detail::header_line(header, "active", std::to_string(rm.active));
  detail::header_line(header, "theta", format_double(rm.threshold));
  detail::header_line(header, "rho", format_double(rm.config.rho));
  detail::header_line(header, "gamma", format_double(rm.config.gamma));
  detail::header_line(header, "eta", format_double(rm.config.eta));
  detail::header_line(header, "epsilon", format_double(rm.config.epsilon));
  detail::header_line(header, "clip_lo", format_double(rm.config.clip_lo));
  detail::header_line(header, "clip_hi", format_double(rm.config.clip_hi));
  detail::header_line(header, "aggregation", to_string(rm.config.aggregation));
  detail::header_line(header, "shrink_mode", to_string(rm.config.shrink_mode));
  detail::header_line(header, "normalized", rm.normalized ? "true" : "false");
  detail::header_line(header, "input_digest",
                      rm.input_digest.empty() ? "none" : rm.input_digest);
  for (const std::string& name : rm.source_names) {
    require(name.find('\n') == std::string::npos,
            "rzm: source name contains newline");
    detail::header_line(header, "source", name);
  }

  ByteWriter w;
  w.bytes("REZM");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  for (Index i = 0; i < d; ++i) w.f64(rm.mean[i]);
  for (Index i = 0; i < d; ++i) w.f64(rm.basis.eigenvalues[i]);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i) w.f64(rm.basis.vectors(i, j));
  for (Index i = 0; i < s; ++i)
    for (Index j = 0; j < d; ++j) w.f64(rm.alphas(i, j));
  return w.take();
}

inline RezeMatrix parse_reze_matrix(const std::string& data) {
  ByteReader r(data, "rzm");
  if (r.bytes(4) != "REZM") throw io_error("rzm: bad magic at byte 0");
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw io_error("rzm: unsupported version " + std::to_string(version));
  const std::uint32_t header_len = r.u32();
  const std::string header = r.bytes(header_len);

  detail::HeaderParser hp(header);
  RezeMatrix rm;
  const Index d = static_cast<Index>(detail::parse_uint(hp.expect("dim"), "dim"));
  const Index s =
      static_cast<Index>(detail::parse_uint(hp.expect("sources"), "sources"));
  rm.active = static_cast<Index>(detail::parse_uint(hp.expect("active"), "active"));
  rm.threshold = parse_double(hp.expect("theta"), "rzm theta");
  rm.config.rho = parse_double(hp.expect("rho"), "rzm rho");
  rm.config.gamma = parse_double(hp.expect("gamma"), "rzm gamma");
  rm.config.eta = parse_double(hp.expect("eta"), "rzm eta");
  rm.config.epsilon = parse_double(hp.expect("epsilon"), "rzm epsilon");
  rm.config.clip_lo = parse_double(hp.expect("clip_lo"), "rzm clip_lo");
  rm.config.clip_hi = parse_double(hp.expect("clip_hi"), "rzm clip_hi");
  const std::string aggregation = hp.expect("aggregation");
  if (aggregation == "median") {
    rm.config.aggregation = Aggregation::median;
  } else if (aggregation == "mean") {
    rm.config.aggregation = Aggregation::mean;
  } else {
    throw io_error("rzm: bad aggregation '" + aggregation + "'");
  }
  const std::string mode = hp.expect("shrink_mode");
  if (mode == "literal") {
    rm.config.shrink_mode = ShrinkMode::literal;
  } else if (mode == "signed") {
    rm.config.shrink_mode = ShrinkMode::signed_denominator;
  } else {
    throw io_error("rzm: bad shrink_mode '" + mode + "'");
  }
  const std::string normalized = hp.expect("normalized");
  if (normalized == "true") {
    rm.normalized = true;
  } else if (normalized == "false") {
    rm.normalized = false;
  } else {
    throw io_error("rzm: bad normalized '" + normalized + "'");
  }
  const std::string digest = hp.expect("input_digest");
  rm.input_digest = digest == "none" ? std::string{} : digest;
  for (Index i = 0; i < s; ++i) rm.source_names.push_back(hp.expect("source"));
  if (!hp.done()) throw io_error("rzm: unexpected extra header lines");

  rm.mean.resize(d);
  for (Index i = 0; i < d; ++i) rm.mean[i] = r.f64();
  rm.basis.eigenvalues.resize(d);
  for (Index i = 0; i < d; ++i) rm.basis.eigenvalues[i] = r.f64();
  rm.basis.vectors.resize(d, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i) rm.basis.vectors(i, j) = r.f64();
  rm.alphas.resize(s, d);
  for (Index i = 0; i < s; ++i)
    for (Index j = 0; j < d; ++j) rm.alphas(i, j) = r.f64();
  r.expect_end();
  try {
    rm.validate();
  } catch (const validation_error& e) {
    throw io_error(std::string("rzm: ") + e.what());
  }
  return rm;
}

inline void write_reze_matrix(const std::string& path, const RezeMatrix& rm) {
  atomic_write_file(path, serialize_reze_matrix(rm));
}

inline RezeMatrix read_reze_matrix(const std::string& path) {
  return parse_reze_matrix(read_file(path));
}

// Provenance. Binary outputs get a "<path>.prov" sidecar; text outputs carry
// the same lines as leading '#' comments. Lines are fixed-order key: value
// pairs with no timestamps.
using Provenance = std::vector<std::pair<std::string, std::string>>;

inline std::string format_provenance_sidecar(const std::string& command,
                                             const Provenance& entries) {
  std::string out;
  detail::header_line(out, "tool", "reze " + std::string(library_version));
  detail::header_line(out, "command", command);
  for (const auto& [key, value] : entries)
    detail::header_line(out, key.c_str(), value);
  return out;
}

inline std::string format_provenance_comment(const std::string& command,
                                             const Provenance& entries) {
  std::string out = "# tool: reze ";
  out += library_version;
  out += "\n";
  out += "# command: " + command + "\n";
  for (const auto& [key, value] : entries)
    out += "# " + key + ": " + value + "\n";
  return out;
}

inline void write_provenance(const std::string& artifact_path,
                             const std::string& command,
                             const Provenance& entries) {
  atomic_write_file(artifact_path + ".prov",
                    format_provenance_sidecar(command, entries));
}

// Ground truth of a synthetic corpus as text: the planted offsets and the
// expected per-source mean shift in relation coordinates.
inline std::string format_truth(const GroundTruth& truth,
                                const std::string& provenance_comment) {
  std::string out = provenance_comment;
  out += "sources: " + std::to_string(truth.mean_shift.rows()) + "\n";
  out += "dim: " + std::to_string(truth.mean_shift.cols()) + "\n";
  out += "planted: " + std::to_string(truth.planted.size()) + "\n";
  for (const PlantedOffset& po : truth.planted)
    out += std::to_string(po.source) + "\t" + std::to_string(po.axis) + "\t" +
           format_double(po.offset) + "\n";
  out += "mean_shift:\n";
  for (Index s = 0; s < truth.mean_shift.rows(); ++s) {
    for (Index j = 0; j < truth.mean_shift.cols(); ++j) {
      if (j > 0) out += '\t';
      out += format_double(truth.mean_shift(s, j));
    }
    out += '\n';
  }
  return out;
}

// Per-step loss history as TSV.
inline std::string format_history(const std::vector<StepRecord>& history,
                                  const std::string& provenance_comment) {
  std::string out = provenance_comment;
  out += "step\tmain\treze\tcombined\n";
  for (const StepRecord& rec : history)
    out += std::to_string(rec.step) + "\t" + format_double(rec.main) + "\t" +
           format_double(rec.reze) + "\t" + format_double(rec.combined) + "\n";
  return out;
}

// Dispersion report as a per-dimension TSV block followed by key: value
// summary lines.
inline std::string format_report(const DispersionReport& report,
                                 double isoscore_before, double isoscore_after,
                                 double displacement) {
  std::string out = "dim\teigenvalue\tv_before\tv_after\tratio\tflagged\n";
  for (Index j = 0; j < report.v_before.size(); ++j)
    out += std::to_string(j) + "\t" + format_double(report.eigenvalues[j]) +
           "\t" + format_double(report.v_before[j]) + "\t" +
           format_double(report.v_after[j]) + "\t" +
           format_double(report.ratio[j]) + "\t" +
           (report.flagged[static_cast<std::size_t>(j)] ? "1" : "0") + "\n";
  out += "active: " + std::to_string(report.active) + "\n";
  out += "threshold: " + format_double(report.threshold) + "\n";
  out += "flagged: " + std::to_string(report.flagged_count) + "\n";
  out += "flagged_v_before: " + format_double(report.flagged_before) + "\n";
  out += "flagged_v_after: " + format_double(report.flagged_after) + "\n";
  out += "reduction: " + format_double(report.reduction) + "\n";
  out += "isoscore_before: " + format_double(isoscore_before) + "\n";
  out += "isoscore_after: " + format_double(isoscore_after) + "\n";
  out += "mean_displacement: " + format_double(displacement) + "\n";
  return out;
}

// JSON configuration files. Unknown keys are rejected so typos fail loudly.

namespace detail {

inline nlohmann::json parse_json(const std::string& text, const char* what) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw validation_error(std::string(what) + ": malformed JSON");
  return j;
}

inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> known,
                                const char* what) {
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    for (const char* k : known)
      if (key == k) found = true;
    if (!found)
      throw validation_error(std::string(what) + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline SynthConfig parse_synth_config(const std::string& text) {
  const nlohmann::json j = detail::parse_json(text, "synth config");
  detail::reject_unknown_keys(j,
                              {"dim", "sources", "samples_per_source",
                               "base_scales", "pair_noise", "seed", "planted",
                               "source_names"},
                              "synth config");
  SynthConfig config;
  try {
    config.dim = j.at("dim").get<Index>();
    config.sources = j.at("sources").get<Index>();
    config.samples_per_source = j.at("samples_per_source").get<Index>();
    if (j.contains("base_scales")) {
      const nlohmann::json& scales = j.at("base_scales");
      if (scales.is_number()) {
        config.base_scales.assign(static_cast<std::size_t>(config.dim),
                                  scales.get<double>());
      } else {
        config.base_scales = scales.get<std::vector<double>>();
      }
    }
    if (j.contains("pair_noise")) config.pair_noise = j.at("pair_noise").get<double>();
    if (j.contains("seed")) config.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("planted")) {
      for (const nlohmann::json& entry : j.at("planted")) {
        detail::reject_unknown_keys(entry, {"source", "axis", "offset"},
                                    "synth config planted entry");
        config.planted.push_back({entry.at("source").get<Index>(),
                                  entry.at("axis").get<Index>(),
                                  entry.at("offset").get<double>()});
      }
    }
    if (j.contains("source_names"))
      config.source_names = j.at("source_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("synth config: ") + e.what());
  }
  config.validate();
  return config;
}

// A training run: loop settings plus the paths of the embedding dumps to
// train on.
struct TrainRunConfig {
  TrainConfig train;
  std::string anchors_path;
  std::string positives_path;
};

inline TrainRunConfig parse_train_config(const std::string& text) {
  const nlohmann::json j = detail::parse_json(text, "train config");
  detail::reject_unknown_keys(
      j,
      {"steps", "batch_size", "learning_rate", "temperature", "reg_weight",
       "shuffle_seed", "mixed_batches", "init", "init_scale", "init_seed",
       "anchors", "positives"},
      "train config");
  TrainRunConfig config;
  try {
    config.anchors_path = j.at("anchors").get<std::string>();
    config.positives_path = j.at("positives").get<std::string>();
    TrainConfig& t = config.train;
    if (j.contains("steps")) t.steps = j.at("steps").get<Index>();
    if (j.contains("batch_size")) t.batch_size = j.at("batch_size").get<Index>();
    if (j.contains("learning_rate"))
      t.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("temperature"))
      t.objective.temperature = j.at("temperature").get<double>();
    if (j.contains("reg_weight"))
      t.objective.reg_weight = j.at("reg_weight").get<double>();
    if (j.contains("shuffle_seed"))
      t.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
    if (j.contains("mixed_batches"))
      t.mixed_batches = j.at("mixed_batches").get<bool>();
    if (j.contains("init")) {
      const std::string init = j.at("init").get<std::string>();
      if (init == "identity") {
        t.init = EncoderInit::identity;
      } else if (init == "perturbed") {
        t.init = EncoderInit::perturbed;
      } else {
        throw validation_error("train config: bad init '" + init + "'");
      }
    }
    if (j.contains("init_scale")) t.init_scale = j.at("init_scale").get<double>();
    if (j.contains("init_seed"))
      t.init_seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("train config: ") + e.what());
  }
  config.train.validate();
  return config;
}

}  // namespace reze
