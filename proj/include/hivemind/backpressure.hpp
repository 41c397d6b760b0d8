#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <numeric>
#include <stdexcept>

namespace hivemind {

// ──────────────────────────────────────────────────────────────────────────────
// BackpressureController: AIMD concurrency control plus a three-state circuit
// breaker, driven by per-request outcomes.
//
// AIMD rule, applied once per update boundary (both a minimum sample count
// and a minimum interval must have elapsed):
//     mean latency <= target  →  c := c + alpha
//     mean latency  > target  →  c := c * beta
// and immediately on every failed request:
//     c := c * beta
// with c clamped to [cMin, cMax] after every step.
//
// Circuit breaker:
//     Closed   → Open      when the last errWindow outcomes are at least
//                           errWindow long and the error fraction reaches
//                           errThreshold
//     Open     → HalfOpen  after cooldownMs; the transition hands exactly one
//                           caller a probe ticket
//     HalfOpen → Closed    probe succeeded (outcome window resets)
//     HalfOpen → Open      probe failed (cooldown restarts)
// While Open (or while the single probe is outstanding) callers fast-fail.
//
// All entry points take a millisecond monotonic time so every transition is
// deterministic under test.
// ──────────────────────────────────────────────────────────────────────────────

enum class CircuitState { Closed, Open, HalfOpen };

inline const char* circuitStateName(CircuitState s) {
    switch (s) {
    case CircuitState::Closed:
        return "closed";
    case CircuitState::Open:
        return "open";
    default:
        return "half_open";
    }
}

struct BackpressureConfig {
    double alpha = 0.5;            // additive increase step
    double beta = 0.5;             // multiplicative decrease factor
    double cMin = 1.0;             // concurrency floor
    double cMax = 5.0;             // concurrency ceiling (and starting point)
    double latencyTargetMs = 3000; // AIMD comparison target
    size_t latencyWindow = 20;     // rolling mean over this many samples
    size_t minSamplesPerUpdate = 5;
    int64_t minUpdateIntervalMs = 1000;
    size_t errWindow = 20;         // outcomes considered by the breaker
    double errThreshold = 0.5;     // open at this error fraction
    int64_t cooldownMs = 10000;    // Open → HalfOpen delay
};

class BackpressureController {
public:
    struct Gate {
        enum class Action { Proceed, FastFail, Probe };
        Action action = Action::Proceed;
        int64_t retryAfterMs = 0; // FastFail only: suggested client delay
    };

    explicit BackpressureController(BackpressureConfig cfg) : cfg_(cfg), limit_(cfg.cMax) {
        if (cfg_.cMin < 1.0)
            cfg_.cMin = 1.0;
        limit_ = std::clamp(limit_, cfg_.cMin, cfg_.cMax);
    }

    // Invoked whenever the concurrency limit changes; wired to
    // AdmissionGate::setMaxConcurrency by the proxy. Called outside any
    // re-entrant path (the gate never calls back into the controller).
    void onLimitChange(std::function<void(double)> fn) {
        std::lock_guard<std::mutex> lock(mu_);
        limitChange_ = std::move(fn);
    }

    double currentLimit() const {
        std::lock_guard<std::mutex> lock(mu_);
        return limit_;
    }

    CircuitState circuitState() const {
        std::lock_guard<std::mutex> lock(mu_);
        return state_;
    }

    // Pre-flight circuit decision for one arriving request.
    Gate checkCircuit(int64_t nowMs) {
        std::unique_lock<std::mutex> lock(mu_);
        switch (state_) {
        case CircuitState::Closed:
            return {Gate::Action::Proceed, 0};
        case CircuitState::Open: {
            int64_t elapsed = nowMs - openedAtMs_;
            if (elapsed >= cfg_.cooldownMs) {
                // First arrival after cooldown becomes the probe.
                state_ = CircuitState::HalfOpen;
                probeOutstanding_ = true;
                return {Gate::Action::Probe, 0};
            }
            return {Gate::Action::FastFail, cfg_.cooldownMs - elapsed};
        }
        case CircuitState::HalfOpen:
        default:
            if (!probeOutstanding_) {
                probeOutstanding_ = true;
                return {Gate::Action::Probe, 0};
            }
            return {Gate::Action::FastFail, cfg_.cooldownMs};
        }
    }

    // Successful request: records the latency sample, marks a good outcome,
    // and applies the AIMD update if a boundary was crossed.
    void onSuccess(int64_t nowMs, double latencyMs) {
        std::unique_lock<std::mutex> lock(mu_);
        latencies_.push_back(latencyMs);
        while (latencies_.size() > cfg_.latencyWindow)
            latencies_.pop_front();
        recordOutcomeLocked(true);
        ++samplesSinceUpdate_;
        maybeUpdateLocked(nowMs, std::move(lock));
    }

    // Failed request: immediate multiplicative decrease, bad outcome mark,
    // and possibly a Closed → Open transition. Failures while Open or
    // HalfOpen still decrease c and are recorded, but only the probe result
    // can move the state machine out of those states.
    void onFailure(int64_t nowMs) {
        std::unique_lock<std::mutex> lock(mu_);
        applyDecreaseLocked();
        recordOutcomeLocked(false);
        if (state_ == CircuitState::Closed && outcomes_.size() >= cfg_.errWindow) {
            size_t errors = 0;
            for (bool ok : outcomes_)
                if (!ok)
                    ++errors;
            if (static_cast<double>(errors) >=
                cfg_.errThreshold * static_cast<double>(outcomes_.size())) {
                state_ = CircuitState::Open;
                openedAtMs_ = nowMs;
            }
        }
        notifyLimitLocked(std::move(lock));
    }

    // Result of the single HalfOpen probe. Success closes the circuit and
    // resets the outcome window; failure reopens it and restarts cooldown.
    void onProbeResult(int64_t nowMs, bool success, double latencyMs = 0.0) {
        std::unique_lock<std::mutex> lock(mu_);
        if (state_ != CircuitState::HalfOpen || !probeOutstanding_)
            throw std::logic_error("BackpressureController: probe result without outstanding probe");
        probeOutstanding_ = false;
        if (success) {
            state_ = CircuitState::Closed;
            outcomes_.clear();
            latencies_.push_back(latencyMs);
            while (latencies_.size() > cfg_.latencyWindow)
                latencies_.pop_front();
            ++samplesSinceUpdate_;
            maybeUpdateLocked(nowMs, std::move(lock));
        } else {
            state_ = CircuitState::Open;
            openedAtMs_ = nowMs;
            applyDecreaseLocked();
            notifyLimitLocked(std::move(lock));
        }
    }

    // The probe holder bailed before sending (budget denial, shutdown). The
    // circuit returns to Open with the cooldown already elapsed, so the next
    // arrival immediately becomes the new probe; nothing was learned about
    // upstream health.
    void onProbeAbandoned(int64_t nowMs) {
        std::lock_guard<std::mutex> lock(mu_);
        if (state_ != CircuitState::HalfOpen || !probeOutstanding_)
            return;
        probeOutstanding_ = false;
        state_ = CircuitState::Open;
        openedAtMs_ = nowMs - cfg_.cooldownMs;
    }

    const BackpressureConfig& config() const { return cfg_; }

    struct Snapshot {
        double limit;
        CircuitState state;
        size_t outcomeCount;
        size_t outcomeErrors;
        double meanLatencyMs;
    };

    Snapshot snapshot() const {
        std::lock_guard<std::mutex> lock(mu_);
        Snapshot s;
        s.limit = limit_;
        s.state = state_;
        s.outcomeCount = outcomes_.size();
        s.outcomeErrors = 0;
        for (bool ok : outcomes_)
            if (!ok)
                ++s.outcomeErrors;
        s.meanLatencyMs =
            latencies_.empty()
                ? 0.0
                : std::accumulate(latencies_.begin(), latencies_.end(), 0.0) / latencies_.size();
        return s;
    }

private:
    void recordOutcomeLocked(bool ok) {
        outcomes_.push_back(ok);
        while (outcomes_.size() > cfg_.errWindow)
            outcomes_.pop_front();
    }

    void applyDecreaseLocked() {
        limit_ = std::clamp(limit_ * cfg_.beta, cfg_.cMin, cfg_.cMax);
    }

    // AIMD boundary: enough fresh samples AND enough elapsed time.
    void maybeUpdateLocked(int64_t nowMs, std::unique_lock<std::mutex> lock) {
        if (samplesSinceUpdate_ < cfg_.minSamplesPerUpdate ||
            nowMs - lastUpdateMs_ < cfg_.minUpdateIntervalMs) {
            return;
        }
        double mean =
            std::accumulate(latencies_.begin(), latencies_.end(), 0.0) / latencies_.size();
        if (mean <= cfg_.latencyTargetMs)
            limit_ = std::clamp(limit_ + cfg_.alpha, cfg_.cMin, cfg_.cMax);
        else
            limit_ = std::clamp(limit_ * cfg_.beta, cfg_.cMin, cfg_.cMax);
        samplesSinceUpdate_ = 0;
        lastUpdateMs_ = nowMs;
        notifyLimitLocked(std::move(lock));
    }

    // Fires the resize callback outside the lock; the gate takes its own.
    void notifyLimitLocked(std::unique_lock<std::mutex> lock) {
        double value = limit_;
        auto fn = limitChange_;
        lock.unlock();
        if (fn)
            fn(value);
    }

    mutable std::mutex mu_;
    BackpressureConfig cfg_;
    double limit_;
    CircuitState state_ = CircuitState::Closed;
    int64_t openedAtMs_ = 0;
    bool probeOutstanding_ = false;
    std::deque<double> latencies_;
    std::deque<bool> outcomes_;
    size_t samplesSinceUpdate_ = 0;
    int64_t lastUpdateMs_ = 0;
    std::function<void(double)> limitChange_;
};

} // namespace hivemind
