#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace iia {

/// Base of every error raised by the library. `kind()` is the stable class
/// name printed by the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual std::string_view kind() const noexcept = 0;
};

#define IIA_DEFINE_ERROR(Name)                                          \
  class Name : public Error {                                           \
   public:                                                              \
    using Error::Error;                                                 \
    std::string_view kind() const noexcept override { return #Name; }   \
  }

IIA_DEFINE_ERROR(FormatError);     // malformed file contents
IIA_DEFINE_ERROR(DataError);       // well-formed but invalid values
IIA_DEFINE_ERROR(IoError);         // filesystem failures
IIA_DEFINE_ERROR(ShapeError);      // incompatible matrix shapes
IIA_DEFINE_ERROR(ConfigError);     // invalid parameters
IIA_DEFINE_ERROR(ContractError);   // caller broke a documented precondition
IIA_DEFINE_ERROR(NumericalError);  // non-finite intermediate values
IIA_DEFINE_ERROR(EvalError);       // nothing to evaluate

#undef IIA_DEFINE_ERROR

}  // namespace iia
