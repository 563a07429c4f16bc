#pragma once

#include <stdexcept>
#include <string>

namespace qguide {

/// Inconsistent shapes, unknown names, missing files and similar setup mistakes.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf appearing in losses, gradients or actions during a run.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qguide
