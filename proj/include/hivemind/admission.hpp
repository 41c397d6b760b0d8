#pragma once

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>

namespace hivemind {

class AdmissionGate;

// RAII ownership of one admission slot. Move-only. The slot is returned on
// destruction; release() may be called once to return it early and throws on
// a second call.
class SlotGuard {
public:
    SlotGuard() = default;
    explicit SlotGuard(AdmissionGate* gate) : gate_(gate) {}

    SlotGuard(SlotGuard&& other) noexcept : gate_(other.gate_) { other.gate_ = nullptr; }
    SlotGuard& operator=(SlotGuard&& other) noexcept {
        if (this != &other) {
            reset();
            gate_ = other.gate_;
            other.gate_ = nullptr;
        }
        return *this;
    }

    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

    ~SlotGuard() { reset(); }

    void release() {
        if (!gate_)
            throw std::logic_error("SlotGuard::release called twice");
        reset();
    }

    bool holds() const { return gate_ != nullptr; }

private:
    void reset();

    AdmissionGate* gate_ = nullptr;
};

// Counting admission gate with a dynamically resizable concurrency limit.
//
// Invariants:
//  - active <= floor(limit) whenever any waiter is blocked (waiters are only
//    admitted while capacity remains, and admission increments active before
//    the waiter wakes, so the limit cannot be overshot by racing wakeups).
//  - Waiters are admitted strictly in arrival order (FIFO).
//  - Lowering the limit never evicts holders; the gate converges as slots
//    drain. Raising it admits queued waiters immediately.
//  - shutdown() unblocks every waiter; outstanding guards drain normally.
class AdmissionGate {
public:
    struct Stats {
        size_t active = 0;
        size_t waiting = 0;
        double limit = 0.0;
        size_t effectiveLimit = 0;
        size_t highWater = 0;
        uint64_t totalAdmitted = 0;
    };

    explicit AdmissionGate(double maxConcurrency) : limit_(maxConcurrency) {}

    ~AdmissionGate() { shutdown(); }

    // Blocks until a slot is free. Returns an owning guard, or nullopt if the
    // gate was shut down before a slot could be granted.
    std::optional<SlotGuard> acquire() {
        std::unique_lock<std::mutex> lock(mu_);
        if (shutdown_)
            return std::nullopt;
        if (waiters_.empty() && active_ < effectiveLimitLocked()) {
            admitLocked();
            return SlotGuard(this);
        }
        auto self = std::make_shared<Waiter>();
        waiters_.push_back(self);
        self->cv.wait(lock, [&] { return self->admitted || shutdown_; });
        if (self->admitted)
            return SlotGuard(this); // active_ was incremented on our behalf
        // Shutdown raced in before admission; drop out of the queue.
        std::erase(waiters_, self);
        return std::nullopt;
    }

    // Non-blocking variant: a slot or nothing. Skips the FIFO queue only when
    // the queue is empty, so it cannot starve blocked waiters.
    std::optional<SlotGuard> tryAcquire() {
        std::lock_guard<std::mutex> lock(mu_);
        if (shutdown_ || !waiters_.empty() || active_ >= effectiveLimitLocked())
            return std::nullopt;
        admitLocked();
        return SlotGuard(this);
    }

    // Fractional limits admit floor(limit) holders. Raising the limit wakes
    // as many queued waiters as now fit.
    void setMaxConcurrency(double limit) {
        std::lock_guard<std::mutex> lock(mu_);
        limit_ = limit;
        wakeWaitersLocked();
    }

    double maxConcurrency() const {
        std::lock_guard<std::mutex> lock(mu_);
        return limit_;
    }

    void shutdown() {
        std::lock_guard<std::mutex> lock(mu_);
        if (shutdown_)
            return;
        shutdown_ = true;
        for (auto& w : waiters_)
            w->cv.notify_one();
    }

    Stats stats() const {
        std::lock_guard<std::mutex> lock(mu_);
        Stats s;
        s.active = active_;
        s.waiting = waiters_.size();
        s.limit = limit_;
        s.effectiveLimit = effectiveLimitLocked();
        s.highWater = highWater_;
        s.totalAdmitted = totalAdmitted_;
        return s;
    }

private:
    friend class SlotGuard;

    struct Waiter {
        std::condition_variable cv;
        bool admitted = false;
    };

    size_t effectiveLimitLocked() const {
        double f = std::floor(limit_);
        if (f < 0.0)
            f = 0.0;
        return static_cast<size_t>(f);
    }

    void admitLocked() {
        ++active_;
        ++totalAdmitted_;
        highWater_ = std::max(highWater_, active_);
    }

    // Admit queued waiters head-first while capacity remains. Incrementing
    // active_ before notifying closes the window where a releasing thread and
    // a fresh acquirer could both claim the same slot.
    void wakeWaitersLocked() {
        while (!waiters_.empty() && active_ < effectiveLimitLocked()) {
            auto w = waiters_.front();
            waiters_.pop_front();
            w->admitted = true;
            admitLocked();
            w->cv.notify_one();
        }
    }

    void releaseSlot() {
        std::lock_guard<std::mutex> lock(mu_);
        if (active_ == 0)
            throw std::logic_error("AdmissionGate: release without matching acquire");
        --active_;
        wakeWaitersLocked();
    }

    mutable std::mutex mu_;
    std::deque<std::shared_ptr<Waiter>> waiters_;
    double limit_;
    size_t active_ = 0;
    size_t highWater_ = 0;
    uint64_t totalAdmitted_ = 0;
    bool shutdown_ = false;
};

inline void SlotGuard::reset() {
    if (gate_) {
        gate_->releaseSlot();
        gate_ = nullptr;
    }
}

} // namespace hivemind
