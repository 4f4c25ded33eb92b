#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace specbench {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid templates, relation specs, run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A malformed record in a dump or data file.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t byte_offset)
      : Error(what + " (at byte " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::uint64_t byte_offset() const { return byte_offset_; }

 private:
  std::uint64_t byte_offset_;
};

// Failure talking to a scorer backend. Transport failures are retryable.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, std::string request_id, bool retryable)
      : Error(what + " [request " + request_id + "]"),
        request_id_(std::move(request_id)),
        retryable_(retryable) {}

  const std::string& request_id() const { return request_id_; }
  bool retryable() const { return retryable_; }

 private:
  std::string request_id_;
  bool retryable_;
};

// A backend lacks a feature the run needs (e.g. embeddings).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// A metric with no defined value (empty input, all pairs excluded).
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace specbench
