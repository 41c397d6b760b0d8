#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>

#include <hivemind/clock.hpp>

namespace hivemind {

// ──────────────────────────────────────────────────────────────────────────────
// SlidingWindow: exact timestamped usage ledger over a rolling interval.
//
// Pure bookkeeping, not thread-safe; callers pass a millisecond "now" so the
// arithmetic is fully testable. An entry recorded at time t counts toward any
// query at time q with t > q - windowMs, i.e. it expires at t + windowMs.
// ──────────────────────────────────────────────────────────────────────────────
class SlidingWindow {
public:
    SlidingWindow(long limit, int64_t windowMs) : limit_(limit), windowMs_(windowMs) {}

    long limit() const { return limit_; }
    void setLimit(long limit) { limit_ = limit; }
    int64_t windowMs() const { return windowMs_; }

    // Total weight still inside the window at nowMs.
    long usedAt(int64_t nowMs) const {
        long sum = 0;
        for (const auto& e : entries_)
            if (e.atMs > nowMs - windowMs_)
                sum += e.weight;
        return sum;
    }

    bool wouldExceed(int64_t nowMs, long weight) const {
        return usedAt(nowMs) + weight > limit_;
    }

    // Earliest time >= nowMs at which `weight` fits without exceeding the
    // limit. Admission frees up only when old entries age out, so the answer
    // is either nowMs or some entry's expiry instant. Returns nullopt when the
    // weight can never fit (weight > limit).
    std::optional<int64_t> earliestAdmitMs(int64_t nowMs, long weight) const {
        if (weight > limit_)
            return std::nullopt;
        long used = usedAt(nowMs);
        if (used + weight <= limit_)
            return nowMs;
        long excess = used + weight - limit_;
        long freed = 0;
        for (const auto& e : entries_) {
            if (e.atMs <= nowMs - windowMs_)
                continue; // already expired
            freed += e.weight;
            if (freed >= excess)
                return e.atMs + windowMs_;
        }
        return std::nullopt; // unreachable while used > limit implies entries exist
    }

    // Seconds (rounded up, at least 1) until enough capacity exists for
    // `weight`. Used to stamp Retry-After on refusals.
    long retryAfterSeconds(int64_t nowMs, long weight) const {
        auto at = earliestAdmitMs(nowMs, weight);
        if (!at)
            return (windowMs_ + 999) / 1000;
        if (*at <= nowMs)
            return 0;
        return std::max<long>(1, static_cast<long>((*at - nowMs + 999) / 1000));
    }

    // Records are expected in non-decreasing time order; out-of-order times
    // are clamped forward so expiry stays monotonic.
    void record(int64_t nowMs, long weight) {
        if (!entries_.empty() && nowMs < entries_.back().atMs)
            nowMs = entries_.back().atMs;
        entries_.push_back({nowMs, weight});
    }

    void evictExpired(int64_t nowMs) {
        while (!entries_.empty() && entries_.front().atMs <= nowMs - windowMs_)
            entries_.pop_front();
    }

    // Expiry instant of the oldest live entry, if any: the next moment
    // capacity frees up on its own.
    std::optional<int64_t> oldestExpiryMs(int64_t nowMs) const {
        for (const auto& e : entries_)
            if (e.atMs > nowMs - windowMs_)
                return e.atMs + windowMs_;
        return std::nullopt;
    }

    void clear() { entries_.clear(); }
    size_t entryCount() const { return entries_.size(); }

private:
    struct Entry {
        int64_t atMs;
        long weight;
    };

    long limit_;
    int64_t windowMs_;
    std::deque<Entry> entries_;
};

// ──────────────────────────────────────────────────────────────────────────────
// Upstream rate-limit header observation.
//
// Providers advertise request/token budgets in response headers. When the
// advertised remaining count dips to the pause threshold, all traffic holds
// until the advertised reset instant instead of racing the provider for the
// last few slots.
// ──────────────────────────────────────────────────────────────────────────────
struct RateHeaderInfo {
    std::optional<long> limitRequests;
    std::optional<long> remainingRequests;
    std::optional<int64_t> resetRequestsMs; // delay until the request budget refills
    std::optional<long> limitTokens;
    std::optional<long> remainingTokens;
    std::optional<int64_t> resetTokensMs;

    bool any() const { return remainingRequests || remainingTokens; }
};

// remaining <= max(2, ceil(10% of limit)) triggers a pause.
inline long pauseThreshold(long limit) {
    long tenth = (limit + 9) / 10;
    return std::max<long>(2, tenth);
}

// Parses "600ms" / "1.5s" / "6m0s" / "1h2m3.5s" style reset durations.
inline std::optional<int64_t> parseResetDurationMs(const std::string& text) {
    if (text.empty())
        return std::nullopt;
    double totalMs = 0.0;
    size_t i = 0;
    bool sawUnit = false;
    while (i < text.size()) {
        size_t start = i;
        while (i < text.size() && (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.'))
            ++i;
        if (i == start)
            return std::nullopt;
        double value = std::stod(text.substr(start, i - start));
        if (i >= text.size()) {
            // Bare number: treat as seconds.
            totalMs += value * 1000.0;
            sawUnit = true;
            break;
        }
        if (text.compare(i, 2, "ms") == 0) {
            totalMs += value;
            i += 2;
        } else if (text[i] == 'h') {
            totalMs += value * 3600000.0;
            i += 1;
        } else if (text[i] == 'm') {
            totalMs += value * 60000.0;
            i += 1;
        } else if (text[i] == 's') {
            totalMs += value * 1000.0;
            i += 1;
        } else {
            return std::nullopt;
        }
        sawUnit = true;
    }
    if (!sawUnit)
        return std::nullopt;
    return static_cast<int64_t>(std::llround(totalMs));
}

// ──────────────────────────────────────────────────────────────────────────────
// RateGate: blocking request+token admission against two sliding windows,
// plus a global pause honored by every caller. A waiter computes its own
// earliest feasible instant and sleeps until then; any limit change or pause
// update re-wakes all waiters to recompute.
// ──────────────────────────────────────────────────────────────────────────────
class RateGate {
public:
    enum class Admit { Ok, InfeasibleWeight, Shutdown };

    RateGate(long rpmLimit, long tpmLimit, int64_t windowMs)
        : requests_(rpmLimit, windowMs), tokens_(tpmLimit, windowMs) {}

    // Blocks until one request slot plus `tokenWeight` token capacity are
    // simultaneously available and no global pause is active, then records
    // both. Disabled behavior (bypass) is the caller's concern.
    Admit waitAndRecord(long tokenWeight) {
        std::unique_lock<std::mutex> lock(mu_);
        for (;;) {
            if (shutdown_)
                return Admit::Shutdown;
            int64_t now = steadyNowMs();
            requests_.evictExpired(now);
            tokens_.evictExpired(now);
            auto reqAt = requests_.earliestAdmitMs(now, 1);
            auto tokAt = tokens_.earliestAdmitMs(now, tokenWeight);
            if (!reqAt || !tokAt)
                return Admit::InfeasibleWeight;
            int64_t target = std::max({*reqAt, *tokAt, pauseUntilMs_});
            if (target <= now) {
                requests_.record(now, 1);
                tokens_.record(now, tokenWeight);
                return Admit::Ok;
            }
            cv_.wait_until(lock, msToSteady(target));
        }
    }

    // Longest-pause-wins; an earlier pause never shortens a later one.
    void pauseAllUntil(int64_t steadyDeadlineMs) {
        std::lock_guard<std::mutex> lock(mu_);
        if (steadyDeadlineMs > pauseUntilMs_) {
            pauseUntilMs_ = steadyDeadlineMs;
            cv_.notify_all();
        }
    }

    // Applies provider-advertised budget headers: near-exhaustion pauses all
    // traffic until the advertised reset.
    void observeHeaders(const RateHeaderInfo& info) {
        int64_t now = steadyNowMs();
        if (info.remainingRequests && info.limitRequests &&
            *info.remainingRequests <= pauseThreshold(*info.limitRequests)) {
            pauseAllUntil(now + info.resetRequestsMs.value_or(1000));
        }
        if (info.remainingTokens && info.limitTokens &&
            *info.remainingTokens <= pauseThreshold(*info.limitTokens)) {
            pauseAllUntil(now + info.resetTokensMs.value_or(1000));
        }
    }

    void setLimits(long rpmLimit, long tpmLimit) {
        std::lock_guard<std::mutex> lock(mu_);
        requests_.setLimit(rpmLimit);
        tokens_.setLimit(tpmLimit);
        cv_.notify_all();
    }

    void shutdown() {
        std::lock_guard<std::mutex> lock(mu_);
        shutdown_ = true;
        cv_.notify_all();
    }

    struct Usage {
        long requestsUsed = 0;
        long requestLimit = 0;
        long tokensUsed = 0;
        long tokenLimit = 0;
        bool paused = false;
        int64_t pauseRemainingMs = 0;
    };

    Usage usage() const {
        std::lock_guard<std::mutex> lock(mu_);
        int64_t now = steadyNowMs();
        Usage u;
        u.requestsUsed = requests_.usedAt(now);
        u.requestLimit = requests_.limit();
        u.tokensUsed = tokens_.usedAt(now);
        u.tokenLimit = tokens_.limit();
        u.paused = pauseUntilMs_ > now;
        u.pauseRemainingMs = u.paused ? pauseUntilMs_ - now : 0;
        return u;
    }

private:
    static std::chrono::steady_clock::time_point msToSteady(int64_t ms) {
        return std::chrono::steady_clock::time_point(std::chrono::milliseconds(ms));
    }

    mutable std::mutex mu_;
    std::condition_variable cv_;
    SlidingWindow requests_;
    SlidingWindow tokens_;
    int64_t pauseUntilMs_ = 0;
    bool shutdown_ = false;
};

} // namespace hivemind
