#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cstdint>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace reze {

inline constexpr std::string_view library_version = "1.0.0";

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Validation failures map to CLI exit code 1, file format failures to exit
// code 2.
class validation_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class io_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw validation_error(message);
}

// Non-fatal diagnostics (rank deficiency, zero-norm halves, single-source
// pools) go through a replaceable sink so tests can capture them.
using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& message) {
    std::cerr << "warning: " << message << '\n';
  };
  return sink;
}

inline void warn(const std::string& message) {
  if (warning_sink()) warning_sink()(message);
}

// FNV-1a over raw bytes; used for content digests in provenance metadata.
// Not cryptographic.
inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t state = 0xcbf29ce484222325ULL) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state ^= bytes[i];
    state *= 0x00000100000001b3ULL;
  }
  return state;
}

inline std::string digest_hex(std::uint64_t digest) {
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = hex[digest & 0xf];
    digest >>= 4;
  }
  return out;
}

// Shortest round-trip decimal form, locale independent. All text output of
// floating point numbers goes through here so reruns are byte-identical.
inline std::string format_double(double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  (void)ec;
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view text, const std::string& context) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw io_error(context + ": cannot parse number '" + std::string(text) + "'");
  return value;
}

}  // namespace reze
