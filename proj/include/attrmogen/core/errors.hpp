#pragma once

#include <stdexcept>
#include <string>

namespace attrmogen {

// Error classes surfaced by the CLI as single-line machine-parsable codes.
enum class ErrorClass {
  config,
  shape,
  parameter,
  io,
  version_mismatch,
  truncated,
  offset_range,
  schema,
  numeric,
  corpus,
  policy,
  label,
};

inline const char* error_class_name(ErrorClass c) {
  switch (c) {
    case ErrorClass::config: return "config_error";
    case ErrorClass::shape: return "shape_error";
    case ErrorClass::parameter: return "parameter_error";
    case ErrorClass::io: return "io_error";
    case ErrorClass::version_mismatch: return "version_error";
    case ErrorClass::truncated: return "truncated_error";
    case ErrorClass::offset_range: return "offset_error";
    case ErrorClass::schema: return "schema_error";
    case ErrorClass::numeric: return "numeric_error";
    case ErrorClass::corpus: return "corpus_error";
    case ErrorClass::policy: return "policy_error";
    case ErrorClass::label: return "label_error";
  }
  return "unknown_error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& message)
      : std::runtime_error(std::string(error_class_name(cls)) + ": " + message),
        cls_(cls) {}

  ErrorClass error_class() const { return cls_; }
  const char* class_name() const { return error_class_name(cls_); }

 private:
  ErrorClass cls_;
};

[[noreturn]] inline void fail(ErrorClass cls, const std::string& message) {
  throw Error(cls, message);
}

inline void require(bool cond, ErrorClass cls, const std::string& message) {
  if (!cond) fail(cls, message);
}

}  // namespace attrmogen
