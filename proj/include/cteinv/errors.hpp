#pragma once

#include <stdexcept>
#include <string>

namespace cteinv {

/// Base error carrying a short machine-readable code ("io", "empty_corpus", ...)
/// next to the human-readable message. The CLI serializes both.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& message)
      : Error("invalid_argument", message) {}
};

class EmptyCorpusError : public Error {
 public:
  explicit EmptyCorpusError(const std::string& message)
      : Error("empty_corpus", message) {}
};

class SequenceTooLong : public Error {
 public:
  SequenceTooLong(std::size_t length, std::size_t limit)
      : Error("sequence_too_long",
              "tokenized length " + std::to_string(length) +
                  " exceeds maximum sequence length " + std::to_string(limit)),
        length_(length),
        limit_(limit) {}

  std::size_t length() const noexcept { return length_; }
  std::size_t limit() const noexcept { return limit_; }

 private:
  std::size_t length_;
  std::size_t limit_;
};

class IdOutOfRange : public Error {
 public:
  IdOutOfRange(std::size_t index, long long id, std::size_t vocab_size)
      : Error("id_out_of_range",
              "id " + std::to_string(id) + " at index " + std::to_string(index) +
                  " is outside [0, " + std::to_string(vocab_size) + ")"),
        index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class CapabilityError : public Error {
 public:
  explicit CapabilityError(const std::string& message)
      : Error("capability", message) {}
};

class DigestMismatch : public Error {
 public:
  explicit DigestMismatch(const std::string& message)
      : Error("digest_mismatch", message) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& message) : Error("format", message) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error("numeric", message) {}
};

}  // namespace cteinv
