#pragma once

#include <stdexcept>
#include <string>

namespace gradhub {

// Structural problem: tensor shapes do not match what the architecture or
// the peer's message requires.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Gradient payload contains NaN/Inf entries. The master rejects the whole
// update and keeps its current weights.
class NonFiniteGradientError : public std::runtime_error {
 public:
  explicit NonFiniteGradientError(const std::string& what)
      : std::runtime_error(what) {}
};

class CacheMismatchError : public std::runtime_error {
 public:
  explicit CacheMismatchError(const std::string& what)
      : std::runtime_error(what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class TransportError : public std::runtime_error {
 public:
  explicit TransportError(const std::string& what)
      : std::runtime_error(what) {}
};

// A peer violated the exchange rules (duplicate gradient in a sync round,
// unexpected message for the current state, ...). Aborts the run.
class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gradhub
