#pragma once

#include <stdexcept>
#include <string>

namespace bci {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes:
// ConfigError -> 2, DataFormatError -> 3, ProtocolError/ConvergenceError -> 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataFormatError : std::runtime_error {
  explicit DataFormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConvergenceError : std::runtime_error {
  explicit ConvergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SizeError : std::runtime_error {
  explicit SizeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct WorkspaceError : std::runtime_error {
  explicit WorkspaceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bci
