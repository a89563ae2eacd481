#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace relex {

/// Tensor or model shapes do not line up.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// NaN or Inf reached a public entry point.
class NonFiniteError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Optimization produced a non-finite objective. `epoch()` is the pass at
/// which it was detected.
class DivergenceError : public std::runtime_error {
public:
  DivergenceError(const std::string& what, std::size_t epoch)
      : std::runtime_error(what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

private:
  std::size_t epoch_;
};

enum class FormatErrc {
  io,
  bad_magic,
  version_mismatch,
  malformed_header,
  truncated,
  count_mismatch,
  digest_mismatch,
};

inline const char* to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::io: return "io";
    case FormatErrc::bad_magic: return "bad_magic";
    case FormatErrc::version_mismatch: return "version_mismatch";
    case FormatErrc::malformed_header: return "malformed_header";
    case FormatErrc::truncated: return "truncated";
    case FormatErrc::count_mismatch: return "count_mismatch";
    case FormatErrc::digest_mismatch: return "digest_mismatch";
  }
  return "unknown";
}

/// Raised by every loader on malformed input.
class FormatError : public std::runtime_error {
public:
  FormatError(FormatErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  FormatErrc code() const noexcept { return code_; }

private:
  FormatErrc code_;
};

/// Configuration validation failure. Carries every problem found, not just the first.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

private:
  static std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (const auto& p : items) {
      if (!out.empty()) out += "; ";
      out += p;
    }
    return out;
  }
  std::vector<std::string> problems_;
};

}  // namespace relex
