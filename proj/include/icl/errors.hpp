#pragma once

#include <stdexcept>
#include <string>

namespace icl {

// Base of every error the library throws. The CLI maps ConfigError and
// FileError to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ICL_DEFINE_ERROR(Name)          \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  };

ICL_DEFINE_ERROR(IndexError)
ICL_DEFINE_ERROR(LevelError)
ICL_DEFINE_ERROR(DomainError)
ICL_DEFINE_ERROR(ShapeError)
ICL_DEFINE_ERROR(TapeError)
ICL_DEFINE_ERROR(ContextLengthError)
ICL_DEFINE_ERROR(ConditioningError)
ICL_DEFINE_ERROR(LikelihoodError)
ICL_DEFINE_ERROR(DivergenceError)
ICL_DEFINE_ERROR(ShiftBudgetError)
ICL_DEFINE_ERROR(LogDomainError)
ICL_DEFINE_ERROR(ValidationError)
ICL_DEFINE_ERROR(UnsupportedError)
ICL_DEFINE_ERROR(ConfigError)
ICL_DEFINE_ERROR(FileError)

#undef ICL_DEFINE_ERROR

}  // namespace icl
