#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <reze/reze.hpp>

namespace test_support {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::string pattern =
        (std::filesystem::temp_directory_path() / "reze_test_XXXXXX").string();
    char* made = mkdtemp(pattern.data());
    if (made == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = made;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const {
    return (std::filesystem::path(path_) / name).string();
  }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path);
}

inline std::string shell_quote(const std::string& arg) {
  std::string out = "'";
  for (char c : arg) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  out += "'";
  return out;
}

// Runs the CLI binary with the given arguments, capturing stdout and stderr
// separately. Returns the process exit code.
inline int run_cli(const std::string& cli, const std::vector<std::string>& args,
                   const TempDir& dir, std::string* out = nullptr,
                   std::string* err = nullptr) {
  std::string cmd = shell_quote(cli);
  for (const std::string& a : args) cmd += " " + shell_quote(a);
  const std::string out_path = dir.file(".cli_stdout");
  const std::string err_path = dir.file(".cli_stderr");
  cmd += " > " + shell_quote(out_path) + " 2> " + shell_quote(err_path);
  const int status = std::system(cmd.c_str());
  if (out) *out = read_text(out_path);
  if (err) *err = read_text(err_path);
  if (status == -1) throw std::runtime_error("system() failed");
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Redirects library warnings into a vector for the lifetime of the object.
class CaptureWarnings {
 public:
  CaptureWarnings() : previous_(reze::warning_sink()) {
    reze::warning_sink() = [this](const std::string& message) {
      messages.push_back(message);
    };
  }
  ~CaptureWarnings() { reze::warning_sink() = previous_; }
  CaptureWarnings(const CaptureWarnings&) = delete;
  CaptureWarnings& operator=(const CaptureWarnings&) = delete;

  std::vector<std::string> messages;

 private:
  reze::WarningSink previous_;
};

inline reze::Matrix random_matrix(reze::CounterRng& rng, reze::Index rows,
                                  reze::Index cols) {
  reze::Matrix m(rows, cols);
  for (reze::Index i = 0; i < rows; ++i)
    for (reze::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// Central finite differences of a scalar functional over every entry of x.
template <typename F>
reze::Matrix fd_gradient(F&& f, const reze::Matrix& x, double step = 1e-6) {
  reze::Matrix grad(x.rows(), x.cols());
  reze::Matrix probe = x;
  for (reze::Index i = 0; i < x.rows(); ++i) {
    for (reze::Index j = 0; j < x.cols(); ++j) {
      const double saved = probe(i, j);
      probe(i, j) = saved + step;
      const double up = f(probe);
      probe(i, j) = saved - step;
      const double down = f(probe);
      probe(i, j) = saved;
      grad(i, j) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

inline double rel_max_diff(const reze::Matrix& a, const reze::Matrix& b) {
  const double diff = (a - b).cwiseAbs().maxCoeff();
  const double scale =
      std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-12});
  return diff / scale;
}

// A small deterministic two-source dump pair used by several suites.
inline std::pair<reze::EmbeddingDump, reze::EmbeddingDump> tiny_dump_pair(
    reze::Index n_per_source = 6, reze::Index dim = 3,
    std::uint64_t seed = 11) {
  reze::CounterRng rng(seed);
  reze::EmbeddingDump anchors, positives;
  anchors.dim = dim;
  positives.dim = dim;
  anchors.vectors = random_matrix(rng, 2 * n_per_source, dim);
  positives.vectors = random_matrix(rng, 2 * n_per_source, dim);
  for (reze::Index i = 0; i < 2 * n_per_source; ++i)
    anchors.source_ids.push_back(i < n_per_source ? 0 : 1);
  positives.source_ids = anchors.source_ids;
  anchors.source_names = {"src_a", "src_b"};
  positives.source_names = anchors.source_names;
  return {anchors, positives};
}

}  // namespace test_support
