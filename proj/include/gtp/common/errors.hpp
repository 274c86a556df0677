#pragma once

#include <stdexcept>

namespace gtp {

/// Bad or inconsistent data on disk or in memory (missing file, invariant
/// violation on load, empty slide). The CLI maps it to exit code 2.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace gtp
