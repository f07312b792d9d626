#pragma once

#include <stdexcept>
#include <string>

namespace poclab {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// --- linear algebra ---
struct NonConvergedEigen : Error {
    explicit NonConvergedEigen(const std::string& msg) : Error(msg) {}
};
struct NotPsd : Error {
    explicit NotPsd(const std::string& msg) : Error(msg) {}
};
struct BelowFloor : Error {
    explicit BelowFloor(const std::string& msg) : Error(msg) {}
};

// --- shapes and domains ---
struct DimMismatch : Error {
    explicit DimMismatch(const std::string& msg) : Error(msg) {}
};
struct SizeMismatch : Error {
    explicit SizeMismatch(const std::string& msg) : Error(msg) {}
};
struct CapExceeded : Error {
    explicit CapExceeded(const std::string& msg) : Error(msg) {}
};
struct DimNotOne : Error {
    explicit DimNotOne(const std::string& msg) : Error(msg) {}
};

// --- dynamics ---
struct NonFinite : Error {
    explicit NonFinite(const std::string& msg) : Error(msg) {}
};
struct PathOutOfRange : Error {
    explicit PathOutOfRange(const std::string& msg) : Error(msg) {}
};
struct OdeStepRejected : Error {
    explicit OdeStepRejected(const std::string& msg) : Error(msg) {}
};
struct CovarianceCollapse : Error {
    explicit CovarianceCollapse(const std::string& msg) : Error(msg) {}
};

// --- experiments ---
struct NonPositiveEstimate : Error {
    explicit NonPositiveEstimate(const std::string& msg) : Error(msg) {}
};
struct TooManyFailedReplicates : Error {
    explicit TooManyFailedReplicates(const std::string& msg) : Error(msg) {}
};
struct UnsupportedObservable : Error {
    explicit UnsupportedObservable(const std::string& msg) : Error(msg) {}
};

// --- configuration / CLI ---
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace poclab
