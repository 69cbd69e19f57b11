#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pxe {

/// Base class for all toolkit errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- input / configuration errors --------------------------------------

struct InvalidParamsError : Error {
    using Error::Error;
};
struct ShapeMismatchError : Error {
    using Error::Error;
};
struct DimensionTooSmallError : Error {
    using Error::Error;
};
struct InvalidClassError : Error {
    using Error::Error;
};
struct InvalidMarginError : Error {
    using Error::Error;
};
struct SingleClassError : Error {
    using Error::Error;
};
struct TargetNotActiveError : Error {
    using Error::Error;
};
struct SpecInfeasibleError : Error {
    using Error::Error;
};
struct KTooLargeError : Error {
    using Error::Error;
};
struct LengthMismatchError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

// --- numerical errors ----------------------------------------------------

struct ZeroVectorError : Error {
    using Error::Error;
};
struct NotNormalizedError : Error {
    using Error::Error;
};
struct ContextMismatchError : Error {
    using Error::Error;
};

/// Thrown by the training loop when a batch loss stops being finite.
/// Carries the global iteration index of the offending batch.
struct NonFiniteLossError : Error {
    NonFiniteLossError(std::size_t iteration, const std::string& what)
        : Error(what), iteration(iteration) {}
    std::size_t iteration;
};

}  // namespace pxe
