#pragma once

#include <cstdint>

namespace vdx::detail {

extern const std::int8_t kTriTable[256][16];

}  // namespace vdx::detail
