#pragma once

#include <stdexcept>
#include <string>

namespace amid {

// Error taxonomy shared by every module:
//   ConfigError  — bad configuration, CLI arguments or run setup (CLI exit 1)
//   DataError    — malformed dataset input (CLI exit 1)
//   NumericError — non-finite values or violated numeric contracts (CLI exit 2)
//   UsageError   — API misuse; a programming error, not an input error
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

}  // namespace amid
