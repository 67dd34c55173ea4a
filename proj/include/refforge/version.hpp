#pragma once

namespace refforge {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace refforge
