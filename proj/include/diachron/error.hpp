// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace diachron {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: configuration, arguments, or preconditions.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Input data could not be parsed. `line` is 1-based, 0 when not applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A computed quantity became NaN or infinite.
class NumericalError : public Error {
 public:
  NumericalError(std::string component, const std::string& what)
      : Error(component + ": " + what), component_(std::move(component)) {}

  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

/// Training diverged; `epoch` is 1-based.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Raised by the pipeline orchestrator when a stage fails.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause)
      : Error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace diachron
