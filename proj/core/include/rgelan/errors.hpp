#ifndef RGELAN_ERRORS_HPP
#define RGELAN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rgelan {

// Shape or channel-count mismatch between tensors, kernels or graph edges.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed config / label / prediction text. Carries a 1-based line number
// (0 when the error is not tied to a specific line).
struct ParseError : std::runtime_error {
    int line = 0;
    ParseError(int line_no, const std::string& msg)
        : std::runtime_error(line_no > 0 ? "line " + std::to_string(line_no) + ": " + msg : msg),
          line(line_no) {}
    explicit ParseError(const std::string& msg) : ParseError(0, msg) {}
};

// Malformed binary payload (PGM image, weight file).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace rgelan

#endif
