#pragma once

namespace simrsa {

inline constexpr const char* kToolName = "simrsa";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace simrsa
