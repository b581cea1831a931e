#pragma once

namespace asyncov {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace asyncov
