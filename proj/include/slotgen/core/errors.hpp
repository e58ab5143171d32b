#pragma once

#include <stdexcept>
#include <string>

namespace slotgen {

// Invalid user input (config, CLI arguments, malformed files). CLI exit 1.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace slotgen
