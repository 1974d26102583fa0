#pragma once

#include <stdexcept>
#include <string>

namespace stt {

/// Base class for all library errors.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape/axis mismatch between tensors.
struct dimension_error : error {
    using error::error;
};

/// A precondition of an operation was violated by the caller.
struct contract_error : error {
    using error::error;
};

/// Invalid or inconsistent configuration values.
struct config_error : error {
    using error::error;
};

/// Malformed file contents (bad magic, truncation). Message carries the offset.
struct format_error : error {
    using error::error;
};

/// Filesystem-level failures (open/read/write).
struct io_error : error {
    using error::error;
};

}  // namespace stt
