#pragma once

#include <stdexcept>
#include <string>

namespace xmerge {

/// Failure category. Maps one-to-one onto the CLI exit codes.
enum class ErrorKind {
  kUsage,      // bad arguments or configuration (exit 2)
  kData,       // I/O, format, checksum, dimension or manifest problems (exit 3)
  kNumerical,  // degenerate spectra, zero strides, divergence (exit 4)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_usage(const std::string& what) { throw Error(ErrorKind::kUsage, what); }
[[noreturn]] inline void throw_data(const std::string& what) { throw Error(ErrorKind::kData, what); }
[[noreturn]] inline void throw_numerical(const std::string& what) {
  throw Error(ErrorKind::kNumerical, what);
}

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
      return 2;
    case ErrorKind::kData:
      return 3;
    case ErrorKind::kNumerical:
      return 4;
  }
  return 1;
}

inline const char* kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
      return "usage";
    case ErrorKind::kData:
      return "data";
    case ErrorKind::kNumerical:
      return "numerical";
  }
  return "unknown";
}

}  // namespace xmerge
