#pragma once

namespace poclab {

inline constexpr const char* kVersion = "poclab 0.1.0";

}  // namespace poclab
