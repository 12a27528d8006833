#pragma once

#include <stdexcept>
#include <string>

namespace ssmlab {

// Invalid configuration; `invariant()` names the violated rule so the CLI can
// report it verbatim.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::string invariant)
      : std::runtime_error("invalid config: " + invariant),
        invariant_(std::move(invariant)) {}

  const std::string& invariant() const { return invariant_; }

 private:
  std::string invariant_;
};

// Training blew up (loss above the divergence bound or non-finite gradients).
class TrainingDiverged : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ssmlab
