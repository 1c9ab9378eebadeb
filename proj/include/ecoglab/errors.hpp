#pragma once

#include <stdexcept>
#include <string>

namespace ecoglab {

// Error taxonomy. Contract violations indicate caller bugs (bad shapes,
// empty inputs); the others describe recoverable data/config conditions.

struct ContractViolation : std::invalid_argument {
  explicit ContractViolation(const std::string& msg) : std::invalid_argument(msg) {}
};

struct ConfigError : std::invalid_argument {
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StateError : std::logic_error {
  explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

struct DegenerateInput : std::runtime_error {
  explicit DegenerateInput(const std::string& msg) : std::runtime_error(msg) {}
};

struct IdentifiabilityError : std::runtime_error {
  explicit IdentifiabilityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ecoglab
