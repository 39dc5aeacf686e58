#pragma once

#include <stdexcept>
#include <string>

namespace pedkd {

/// Violated precondition of a public operation (shape mismatch, bad argument).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stored data disagrees with its manifest (truncated blob, bad record).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Format version or config hash mismatch on load.
class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Replay teacher asked for an image id that is not cached.
class CacheMissError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace pedkd
