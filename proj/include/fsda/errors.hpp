#pragma once

#include <stdexcept>
#include <string>

namespace fsda {

/// Invalid configuration or shape contract. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (non-binary labels, non-finite images, bad files).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite losses, probabilities outside (0,1) and similar.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operation invoked in the wrong training state (e.g. missing pseudo labels).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Protocol violation such as reading target-train labels during training.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace fsda
