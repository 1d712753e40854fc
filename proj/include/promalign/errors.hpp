#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace promalign {

// Non-fatal diagnostics (skipped records, partial loads) go to stderr.
inline void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

// Bad data handed to an operation (shape mismatch, out-of-range id, ...).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid or inconsistent configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A contract between modules was broken; indicates a bug, not bad input.
class InternalError : public std::logic_error {
 public:
  explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

// File system / serialization failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failure in a pluggable external backend (detector, tagger). Retriable;
// callers may skip the affected sample and keep going.
class ExternalError : public std::runtime_error {
 public:
  explicit ExternalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace promalign
