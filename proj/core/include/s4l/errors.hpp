#pragma once

#include <stdexcept>
#include <string>

namespace s4l {

// Failure classes surfaced by the library. Each maps to one contract
// violation family so callers (and tests) can match on the kind.
enum class ErrorKind {
  Format,      // container layout does not match its descriptor
  Data,        // payload holds invalid values (non-finite, out of range)
  Split,       // labeled/test split cannot be constructed
  Config,      // invalid configuration value or combination
  Episode,     // episodic sampling impossible for the given pool
  Shape,       // tensor shape mismatch
  Checkpoint,  // archive manifest/payload inconsistency
  Transfer,    // required parameter missing during partial load
  Contract,    // generic precondition violation
  Metric,      // evaluation input invalid
  Render,      // classification-map rendering failure
  Io,          // filesystem-level failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind k, const std::string& msg) {
  throw Error(k, msg);
}

}  // namespace s4l
