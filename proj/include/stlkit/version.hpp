#pragma once

namespace stlkit {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace stlkit
