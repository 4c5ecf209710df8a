#pragma once

#include <stdexcept>
#include <string>

namespace vme {

// Invalid or contradictory experiment configuration (unknown keys, bad ranges).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// A variational run exhausted its layer or cost-evaluation budget.
class NonConvergenceError : public std::runtime_error {
 public:
  explicit NonConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

// A pipeline stage needs an artifact that is absent or fails its integrity check.
class MissingArtifactError : public std::runtime_error {
 public:
  explicit MissingArtifactError(const std::string& what) : std::runtime_error(what) {}
};

// Nonlinear least squares failed to converge.
class FitError : public std::runtime_error {
 public:
  explicit FitError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace vme
