// Copyright 2026 The mmlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mmlora {

// Every library failure derives from Error so callers (the CLI in particular)
// can map categories onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A sequence is too short for the requested window or kernel.
class InputTooShortError : public Error {
 public:
  using Error::Error;
};

/// A context or cache limit would be exceeded.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Injected embedding spans do not line up with placeholder tokens.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unresolvable input data (manifests, samples, files).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A metric is undefined for the given input (e.g. empty reference).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

/// No score could be parsed from a judge reply; keeps the raw reply.
class ExtractionError : public Error {
 public:
  ExtractionError(const std::string& what, std::string raw_reply)
      : Error(what), raw_reply_(std::move(raw_reply)) {}
  const std::string& raw_reply() const noexcept { return raw_reply_; }

 private:
  std::string raw_reply_;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

/// A frozen parameter group changed during training.
class FrozenMutationError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmlora
