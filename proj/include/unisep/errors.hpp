#pragma once

#include <stdexcept>
#include <string>

namespace unisep {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed caller input (empty waveform, empty clue bundle, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Bad configuration value. `key()` is the dotted path of the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Corrupted checkpoint blob or mismatched resume metadata.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// The attractor decoder rejected its very first attractor.
class NoSourceDetected : public Error {
 public:
  NoSourceDetected() : Error("no source detected") {}
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace unisep
