#pragma once

#include <stdexcept>
#include <string>

namespace strkit {

// Exit-code mapping for the CLI: usage_error -> 1, data_error -> 2,
// numeric_error -> 3. Everything else is a plain runtime_error (also 3).
struct usage_error : std::runtime_error {
    explicit usage_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct config_error : usage_error {
    explicit config_error(const std::string& msg) : usage_error(msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace strkit
