#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace forge {

// Error with a stable machine-readable code next to the human message.
// Codes are part of the public contract (reports, exit-code mapping).
class error : public std::runtime_error {
public:
    error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

} // namespace forge
