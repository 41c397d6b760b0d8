#pragma once

#include <chrono>
#include <cstdint>

namespace hivemind {

// Milliseconds on the monotonic clock. All scheduling decisions (windows,
// cooldowns, backoff deadlines) use this time base so they are immune to
// wall-clock jumps.
inline int64_t steadyNowMs() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Milliseconds since the Unix epoch, for report timestamps only.
inline int64_t wallNowMs() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

} // namespace hivemind
