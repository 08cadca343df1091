#pragma once

#include <stdexcept>
#include <string>

namespace udepth {

// Typed errors so callers can distinguish usage bugs from bad files.
struct DimensionError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ContractError  : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError   : std::runtime_error { using std::runtime_error::runtime_error; };
struct FormatError    : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError        : std::runtime_error { using std::runtime_error::runtime_error; };
struct ParseError     : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError    : std::runtime_error { using std::runtime_error::runtime_error; };

}  // namespace udepth
