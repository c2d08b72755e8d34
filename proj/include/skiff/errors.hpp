#pragma once

#include <stdexcept>
#include <string>

namespace skiff {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// State layer
struct WriteOnReadOnly : Error {
    WriteOnReadOnly() : Error("write attempted through a read-only state handle") {}
};
struct BackendUnavailable : Error {
    using Error::Error;
};
struct NotFound : Error {
    using Error::Error;
};
struct VersionMismatch : Error {
    using Error::Error;
};
struct IoFailure : Error {
    using Error::Error;
};

// Wire / serialization
struct MalformedFrame : Error {
    using Error::Error;
};
struct DigestMismatch : Error {
    using Error::Error;
};

// Training engine
struct ShapeMismatch : Error {
    using Error::Error;
};
struct InfeasibleAssignment : Error {
    using Error::Error;
};
struct TrainerError : Error {
    using Error::Error;
};

// Session orchestration
struct NoClientsAvailable : Error {
    using Error::Error;
};
struct StrategyNotFound : Error {
    using Error::Error;
};
struct ResumeFailed : Error {
    using Error::Error;
};

// Config parsing. Carries the offending key and 1-based line number when known.
struct SchemaError : Error {
    std::string key;
    int line = -1;
    SchemaError(const std::string& msg, std::string k = "", int ln = -1)
        : Error(msg), key(std::move(k)), line(ln) {}
};

}  // namespace skiff
