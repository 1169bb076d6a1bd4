#pragma once

#include <stdexcept>
#include <string>

namespace oat {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// Malformed or truncated tensor/PGM file.
class FormatError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

/// Configuration validation failure. `key()` names the offending JSON key.
class ConfigError : public Error {
public:
  ConfigError(std::string key, const std::string &what)
      : Error("config error at '" + key + "': " + what), key_(std::move(key)) {}
  const std::string &key() const noexcept { return key_; }

private:
  std::string key_;
};

/// A pixel coincides with a sensor, or a sensor element lies inside the grid.
class GeometryError : public Error {
public:
  using Error::Error;
};

class SingularSystem : public Error {
public:
  using Error::Error;
};

/// Iterative solver produced a non-finite objective.
class Divergence : public Error {
public:
  using Error::Error;
};

class TrainingDiverged : public Error {
public:
  TrainingDiverged(int epoch, long step, const std::string &what)
      : Error("training diverged at epoch " + std::to_string(epoch) + ", step " +
              std::to_string(step) + ": " + what),
        epoch_(epoch), step_(step) {}
  int epoch() const noexcept { return epoch_; }
  long step() const noexcept { return step_; }

private:
  int epoch_;
  long step_;
};

class UnsupportedMode : public Error {
public:
  using Error::Error;
};

/// Pearson correlation of a constant image.
class UndefinedCorrelation : public Error {
public:
  using Error::Error;
};

} // namespace oat
