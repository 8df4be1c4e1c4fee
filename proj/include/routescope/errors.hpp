#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace routescope {

// Base for everything the library throws. The CLI maps ValidationError and
// its subclasses to exit code 1 and IoError to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An invariant on a domain value was violated. `field` names the offending
// field; `record` identifies the enclosing record when known.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, std::string record, const std::string& what)
      : Error(compose(field, record, what)),
        field_(std::move(field)),
        record_(std::move(record)) {}

  const std::string& field() const noexcept { return field_; }
  const std::string& record() const noexcept { return record_; }

 private:
  static std::string compose(const std::string& field, const std::string& record,
                             const std::string& what) {
    std::string msg = what;
    if (!field.empty()) msg += " [field: " + field + "]";
    if (!record.empty()) msg += " [record: " + record + "]";
    return msg;
  }

  std::string field_;
  std::string record_;
};

// Serialized input is malformed. Line numbers are 1-based; offset is the byte
// offset of the start of the offending line.
class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, std::size_t offset, const std::string& what)
      : ValidationError("", "",
                        "line " + std::to_string(line) + " (byte offset " +
                            std::to_string(offset) + "): " + what),
        line_(line),
        offset_(offset) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t line_;
  std::size_t offset_;
};

// Well-formed input that disagrees with the declared schema, e.g. a token
// record whose expert count differs from the header's k.
class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace routescope
