#pragma once

#include <stdexcept>
#include <string>

namespace gvd {

// Error with a stable machine-readable code ("empty-softmax", "track-range", ...)
// plus a human message. Tests match on code().
class GvdError : public std::runtime_error {
public:
    GvdError(std::string code, const std::string& detail)
        : std::runtime_error(code + ": " + detail), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& detail) {
    throw GvdError(code, detail);
}

}  // namespace gvd
