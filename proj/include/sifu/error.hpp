#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace sifu {

/// Base of every error the engine raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

/// Manifest-level semantic problem.
struct Violation {
  std::string code;  // e.g. "NonConsecutiveRungs"
  std::string path;  // e.g. "ladders[0].rungs"
  std::string message;

  bool operator==(const Violation&) const = default;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<Violation> violations);
  const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  std::vector<Violation> violations_;
};

class IllegalEdit : public Error {
 public:
  using Error::Error;
};

class InjectionError : public Error {
 public:
  using Error::Error;
};

/// The sandbox or a host facility is unusable. Never raised for player faults.
class InfrastructureError : public Error {
 public:
  using Error::Error;
};

class UnknownFormat : public Error {
 public:
  using Error::Error;
};

class MalformedReport : public Error {
 public:
  using Error::Error;
};

class StateMismatch : public Error {
 public:
  using Error::Error;
};

class UnresolvedPlaceholder : public Error {
 public:
  using Error::Error;
};

class UnknownPlayer : public Error {
 public:
  using Error::Error;
};

class UnknownChallenge : public Error {
 public:
  using Error::Error;
};

class InvalidLikert : public Error {
 public:
  using Error::Error;
};

class NoData : public Error {
 public:
  using Error::Error;
};

}  // namespace sifu
