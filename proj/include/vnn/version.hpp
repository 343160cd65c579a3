#pragma once

namespace vnn {

inline constexpr const char* kArtifactVersion = "0.1.0";

}  // namespace vnn
