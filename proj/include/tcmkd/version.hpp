#pragma once

namespace tcmkd {

inline constexpr const char* kVersion = "0.1.0";

} // namespace tcmkd
