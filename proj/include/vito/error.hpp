#pragma once

#include <stdexcept>
#include <string>

namespace vito {

/// Base of every error thrown by the library. `category()` is a stable,
/// machine-parsable token used by the CLI for its one-line error output.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& w) : Error("invalid_argument", w) {}
};

struct InvalidState : Error {
  explicit InvalidState(const std::string& w) : Error("invalid_state", w) {}
};

struct InvalidConfig : Error {
  explicit InvalidConfig(const std::string& w) : Error("invalid_config", w) {}
};

struct ConfigMismatch : Error {
  explicit ConfigMismatch(const std::string& w) : Error("config_mismatch", w) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error("numeric_error", w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io_error", w) {}
};

struct VersionMismatch : Error {
  explicit VersionMismatch(const std::string& w) : Error("version_mismatch", w) {}
};

struct ChecksumError : Error {
  explicit ChecksumError(const std::string& w) : Error("checksum_error", w) {}
};

struct TruncatedFile : Error {
  explicit TruncatedFile(const std::string& w) : Error("truncated_file", w) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error("format_error", w) {}
};

}  // namespace vito
