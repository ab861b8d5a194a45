#pragma once

#include <stdexcept>
#include <string>

namespace rct {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidSpec : public Error {
 public:
  using Error::Error;
};

// A slot that should have been free was busy. Always a scheduler bug.
class OccupancyConflict : public Error {
 public:
  using Error::Error;
};

// Releasing a slot that is free or owned by another task.
class OwnershipError : public Error {
 public:
  using Error::Error;
};

// Task requirements exceed the capacity of the whole pilot.
class Unschedulable : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Malformed event log; row is 1-based.
class LogParseError : public Error {
 public:
  LogParseError(std::size_t row, const std::string& what)
      : Error("event log row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class OverlayDrained : public Error {
 public:
  using Error::Error;
};

}  // namespace rct
