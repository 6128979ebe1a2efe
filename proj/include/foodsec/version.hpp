#pragma once

#define FOODSEC_VERSION_MAJOR 0
#define FOODSEC_VERSION_MINOR 1
#define FOODSEC_VERSION_PATCH 0
#define FOODSEC_VERSION_STRING "0.1.0"

namespace foodsec {
inline constexpr const char* version() { return FOODSEC_VERSION_STRING; }
}
