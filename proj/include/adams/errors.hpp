#pragma once

#include <stdexcept>
#include <string>

namespace adams {

/// Base class for all errors raised by the toolkit. Parse failures and
/// per-word rule rejections are values, not exceptions; everything that
/// aborts an operation derives from here.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

class EmptyCorpus : public Error {
 public:
  explicit EmptyCorpus(const std::string& msg) : Error("empty corpus: " + msg) {}
};

class EmptyRuleSet : public Error {
 public:
  explicit EmptyRuleSet(const std::string& msg) : Error("empty rule set: " + msg) {}
};

class InvalidSpec : public Error {
 public:
  explicit InvalidSpec(const std::string& msg) : Error("invalid spec: " + msg) {}
};

class InvalidConfig : public Error {
 public:
  explicit InvalidConfig(const std::string& msg) : Error("invalid config: " + msg) {}
};

class UnencodableCharacter : public Error {
 public:
  explicit UnencodableCharacter(const std::string& msg)
      : Error("unencodable character: " + msg) {}
};

class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& msg) : Error("shape mismatch: " + msg) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

class DegenerateLabels : public Error {
 public:
  explicit DegenerateLabels(const std::string& msg)
      : Error("degenerate labels: " + msg) {}
};

class CorruptFile : public Error {
 public:
  explicit CorruptFile(const std::string& msg) : Error("corrupt file: " + msg) {}
};

class VersionMismatch : public Error {
 public:
  explicit VersionMismatch(const std::string& msg)
      : Error("version mismatch: " + msg) {}
};

class FingerprintMismatch : public Error {
 public:
  explicit FingerprintMismatch(const std::string& msg)
      : Error("fingerprint mismatch: " + msg) {}
};

class LengthMismatch : public Error {
 public:
  explicit LengthMismatch(const std::string& msg)
      : Error("length mismatch: " + msg) {}
};

class TooSmall : public Error {
 public:
  explicit TooSmall(const std::string& msg) : Error("too small: " + msg) {}
};

class CorpusTooSmall : public Error {
 public:
  explicit CorpusTooSmall(const std::string& msg)
      : Error("corpus too small: " + msg) {}
};

}  // namespace adams
