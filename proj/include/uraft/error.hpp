#pragma once

#include <stdexcept>
#include <string>

namespace uraft {

// Root of every error raised by the library. Subclasses map one-to-one onto
// the failure modes callers are expected to distinguish.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define URAFT_DEFINE_ERROR(Name)            \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

URAFT_DEFINE_ERROR(InvalidImage);
URAFT_DEFINE_ERROR(FormatError);
URAFT_DEFINE_ERROR(DimensionMismatch);
URAFT_DEFINE_ERROR(DimensionError);
URAFT_DEFINE_ERROR(InsufficientFrames);
URAFT_DEFINE_ERROR(ScaleError);
URAFT_DEFINE_ERROR(ArgumentError);
URAFT_DEFINE_ERROR(DivergenceError);
URAFT_DEFINE_ERROR(InsufficientData);
URAFT_DEFINE_ERROR(NoDominantPeak);

#undef URAFT_DEFINE_ERROR

}  // namespace uraft
