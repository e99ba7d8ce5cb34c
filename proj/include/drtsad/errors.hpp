#pragma once

#include <stdexcept>
#include <string>

namespace drtsad {

// Base class for every typed failure raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define DRTSAD_ERROR_TYPE(Name)                                    \
    class Name : public Error {                                    \
    public:                                                        \
        explicit Name(const std::string& msg) : Error(msg) {}      \
    }

DRTSAD_ERROR_TYPE(PreconditionViolation);
DRTSAD_ERROR_TYPE(InsufficientSamples);
DRTSAD_ERROR_TYPE(ZeroVariance);
DRTSAD_ERROR_TYPE(NotSymmetric);
DRTSAD_ERROR_TYPE(InfiniteDivergence);
DRTSAD_ERROR_TYPE(EvaluationFailed);
DRTSAD_ERROR_TYPE(DimensionMismatch);
DRTSAD_ERROR_TYPE(ManifestMismatch);
DRTSAD_ERROR_TYPE(ParseError);
DRTSAD_ERROR_TYPE(SeriesTooShort);
DRTSAD_ERROR_TYPE(DimensionTooLow);
DRTSAD_ERROR_TYPE(TrainingDiverged);
DRTSAD_ERROR_TYPE(TooLargeForExact);
DRTSAD_ERROR_TYPE(EmptyInput);

#undef DRTSAD_ERROR_TYPE

}  // namespace drtsad
