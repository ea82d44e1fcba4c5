#pragma once

namespace strkit {

inline constexpr const char* kVersion = "0.1.0";

} // namespace strkit
