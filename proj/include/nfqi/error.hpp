#pragma once

#include <stdexcept>
#include <string>

namespace nfqi {

/// Raised on contract violations: bad inputs, invalid configs, malformed files.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nfqi
