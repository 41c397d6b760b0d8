#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <thread>

namespace hivemind {

// Transport-level failure classes, normalized from whatever the HTTP client
// reports. Both are retryable; they are kept distinct for observability.
enum class TransportError { None, ConnectionReset, ServerDisconnected };

// One attempt's result: an HTTP status (0 when no response arrived), the
// transport failure if any, and a parsed Retry-After if the response carried
// one.
struct AttemptOutcome {
    int status = 0;
    TransportError transport = TransportError::None;
    std::optional<int64_t> retryAfterMs;
};

enum class Classification { Success, Retryable, Fatal };

// 429/502/503/529 and transport drops are transient by contract; every other
// status is either success (any 1xx-3xx) or a real answer that retrying
// cannot change.
inline Classification classify(const AttemptOutcome& o) {
    if (o.transport != TransportError::None)
        return Classification::Retryable;
    if (o.status == 429 || o.status == 502 || o.status == 503 || o.status == 529)
        return Classification::Retryable;
    if (o.status >= 100 && o.status < 400)
        return Classification::Success;
    return Classification::Fatal;
}

struct RetryPolicy {
    int maxAttempts = 5;        // total sends, including the first
    int64_t baseDelayMs = 1000; // doubling starts here
    int64_t maxDelayMs = 30000; // cap for computed backoff
};

// Delay before retry k (k = 0 for the first retry):
//     min(maxDelay, base * 2^k + U(0, base))
// A server-provided Retry-After replaces the computed delay entirely and is
// deliberately NOT clamped: the server knows its own recovery horizon.
inline int64_t retryDelayMs(const RetryPolicy& policy, int k,
                            std::optional<int64_t> retryAfterMs, std::mt19937_64& rng) {
    if (retryAfterMs)
        return std::max<int64_t>(0, *retryAfterMs);
    std::uniform_real_distribution<double> jitter(0.0, static_cast<double>(policy.baseDelayMs));
    int shift = std::min(k, 30);
    int64_t exponential = policy.baseDelayMs << shift;
    int64_t delay = exponential + static_cast<int64_t>(jitter(rng));
    return std::min(delay, policy.maxDelayMs);
}

struct RetryResult {
    AttemptOutcome final;
    int attempts = 0;     // sends performed
    int64_t sleptMs = 0;  // total backoff slept
    bool exhausted = false;
};

// Drives attempt() until success, a fatal answer, or attempt exhaustion.
// attempt(i) performs send i (0-based) and returns its outcome; sleeper
// defaults to a real sleep and is injectable for tests.
inline RetryResult executeWithRetry(
    const RetryPolicy& policy, std::mt19937_64& rng,
    const std::function<AttemptOutcome(int)>& attempt,
    const std::function<void(int64_t)>& sleeper = [](int64_t ms) {
        std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    }) {
    RetryResult r;
    for (int i = 0; i < policy.maxAttempts; ++i) {
        r.final = attempt(i);
        r.attempts = i + 1;
        Classification c = classify(r.final);
        if (c != Classification::Retryable)
            return r;
        if (i + 1 >= policy.maxAttempts)
            break;
        int64_t delay = retryDelayMs(policy, i, r.final.retryAfterMs, rng);
        r.sleptMs += delay;
        sleeper(delay);
    }
    r.exhausted = true;
    return r;
}

} // namespace hivemind
