#pragma once

namespace ebmprop {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ebmprop
