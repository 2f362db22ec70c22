#pragma once

namespace rsparse {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace rsparse
