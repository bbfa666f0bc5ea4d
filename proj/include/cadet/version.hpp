#pragma once

namespace cadet {

inline constexpr const char* kToolkitVersion = "0.1.0";

}  // namespace cadet
