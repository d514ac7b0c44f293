#pragma once

#include <stdexcept>
#include <string>

namespace egocognav {

// Base class for every error thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define EGOCOGNAV_DEFINE_ERROR(NAME)                           \
  class NAME : public Error {                                  \
   public:                                                     \
    explicit NAME(const std::string& msg) : Error(msg) {}      \
  };

// geometry
EGOCOGNAV_DEFINE_ERROR(DegenerateInput)
EGOCOGNAV_DEFINE_ERROR(NotARotation)

// compute graph
EGOCOGNAV_DEFINE_ERROR(ShapeMismatch)
EGOCOGNAV_DEFINE_ERROR(NonFinite)
EGOCOGNAV_DEFINE_ERROR(NotScalar)

// data ingestion and episodes
EGOCOGNAV_DEFINE_ERROR(ParseError)
EGOCOGNAV_DEFINE_ERROR(MissingColumn)
EGOCOGNAV_DEFINE_ERROR(BadWindow)
EGOCOGNAV_DEFINE_ERROR(EmptyStream)
EGOCOGNAV_DEFINE_ERROR(TooShort)
EGOCOGNAV_DEFINE_ERROR(BadConfig)
EGOCOGNAV_DEFINE_ERROR(BadMagic)
EGOCOGNAV_DEFINE_ERROR(LengthMismatch)
EGOCOGNAV_DEFINE_ERROR(IoError)

// training and baselines
EGOCOGNAV_DEFINE_ERROR(OutOfRange)
EGOCOGNAV_DEFINE_ERROR(UnfitModel)

// metrics
EGOCOGNAV_DEFINE_ERROR(TooFew)
EGOCOGNAV_DEFINE_ERROR(EmptyGroup)
EGOCOGNAV_DEFINE_ERROR(ZeroVariance)

#undef EGOCOGNAV_DEFINE_ERROR

}  // namespace egocognav
