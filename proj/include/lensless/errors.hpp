#pragma once

#include <stdexcept>
#include <string>

namespace lensless {

// Base for every error thrown by the library. The CLI maps ConfigError to exit
// code 2 and everything else to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define LENSLESS_DEFINE_ERROR(Name)          \
  class Name : public Error {                \
   public:                                   \
    explicit Name(const std::string& what)   \
        : Error(#Name ": " + what) {}        \
  }

LENSLESS_DEFINE_ERROR(ShapeMismatch);
LENSLESS_DEFINE_ERROR(ImaginaryResidueTooLarge);
LENSLESS_DEFINE_ERROR(InvalidParams);
LENSLESS_DEFINE_ERROR(IoError);
LENSLESS_DEFINE_ERROR(BadMagic);
LENSLESS_DEFINE_ERROR(BadDims);
LENSLESS_DEFINE_ERROR(MissingBackground);
LENSLESS_DEFINE_ERROR(NonInvertibleOperator);
LENSLESS_DEFINE_ERROR(OutOfRange);
LENSLESS_DEFINE_ERROR(GraphNotFinalized);
LENSLESS_DEFINE_ERROR(EmptyDataset);
LENSLESS_DEFINE_ERROR(EmptyParameterSet);
LENSLESS_DEFINE_ERROR(ConfigError);
LENSLESS_DEFINE_ERROR(TooSmall);

#undef LENSLESS_DEFINE_ERROR

}  // namespace lensless
