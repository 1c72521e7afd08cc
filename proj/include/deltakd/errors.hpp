// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace deltakd {

/// Base of every library error. `kind()` is a short machine-parsable class
/// name that the CLI prints on failure.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain_error", what) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error("input_error", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what) : Error("protocol_error", what) {}
};

/// Retryable: timeouts, refused connections, peer hang-ups.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error("transport_error", what) {}
};

/// An error frame returned by a logit server.
class RemoteError : public Error {
 public:
  explicit RemoteError(const std::string& what) : Error("remote_error", what) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error("training_error", what) {}
};

class SnapshotError : public Error {
 public:
  explicit SnapshotError(const std::string& what) : Error("snapshot_error", what) {}
};

}  // namespace deltakd
