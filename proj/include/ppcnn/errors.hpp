#pragma once

#include <stdexcept>
#include <string>

namespace ppcnn {

// Base class for every error raised by the library. `kind()` names the
// category so callers (and the CLI) can report it without RTTI games.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define PPCNN_DEFINE_ERROR(Name, label)                       \
  class Name : public Error {                                 \
   public:                                                    \
    explicit Name(const std::string& what) : Error(label, what) {} \
  };

PPCNN_DEFINE_ERROR(DimensionError, "dimension error")
PPCNN_DEFINE_ERROR(IndexError, "index error")
PPCNN_DEFINE_ERROR(ConfigError, "config error")
PPCNN_DEFINE_ERROR(ConsistencyError, "consistency error")
PPCNN_DEFINE_ERROR(NumericError, "numeric error")
PPCNN_DEFINE_ERROR(DegenerateInputError, "degenerate input")
PPCNN_DEFINE_ERROR(ParseError, "parse error")
PPCNN_DEFINE_ERROR(SamplingError, "sampling error")
PPCNN_DEFINE_ERROR(DataError, "data error")
PPCNN_DEFINE_ERROR(InputError, "input error")
PPCNN_DEFINE_ERROR(UsageError, "usage error")
PPCNN_DEFINE_ERROR(FormatError, "format error")

#undef PPCNN_DEFINE_ERROR

// Wraps an error thrown inside a named pipeline stage, keeping the original
// category in the message.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const Error& inner)
      : Error(inner.kind(), "[" + stage + "] " + inner.what()), stage_(stage) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace ppcnn
