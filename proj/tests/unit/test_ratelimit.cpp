#include <catch2/catch_amalgamated.hpp>

#include <hivemind/ratelimit.hpp>

#include <chrono>
#include <random>
#include <thread>
#include <utility>
#include <vector>

using namespace hivemind;

namespace {

// Independent oracle, kept deliberately naive: a window admission question is
// answered by summing every raw event inside (nowMs - windowMs, nowMs]. The
// implementation under test must agree with this on every trace.
struct WindowOracle {
    int64_t windowMs;
    std::vector<std::pair<int64_t, long>> events; // (atMs, weight), time-ordered

    long usedAt(int64_t nowMs) const {
        long sum = 0;
        for (const auto& [at, w] : events)
            if (at > nowMs - windowMs && at <= nowMs)
                sum += w;
        return sum;
    }

    bool fits(int64_t nowMs, long weight, long limit) const {
        return usedAt(nowMs) + weight <= limit;
    }
};

} // namespace

TEST_CASE("sliding window matches the brute-force rolling sum", "[ratelimit]") {
    const long limits[] = {1, 7, 50};
    const int64_t windows[] = {1000, 6000};
    for (long limit : limits) {
        for (int64_t windowMs : windows) {
            std::mt19937_64 rng(static_cast<uint64_t>(limit * 7919 + windowMs));
            SlidingWindow window(limit, windowMs);
            WindowOracle oracle{windowMs, {}};
            int64_t now = 1'000'000;
            std::uniform_int_distribution<int64_t> step(0, windowMs / 4);
            std::uniform_int_distribution<long> weight(1, 10);
            for (int op = 0; op < 2000; ++op) {
                now += step(rng);
                if (op % 3 == 0) {
                    long w = weight(rng);
                    window.record(now, w);
                    oracle.events.emplace_back(now, w);
                } else {
                    REQUIRE(window.usedAt(now) == oracle.usedAt(now));
                    long w = weight(rng);
                    REQUIRE(window.wouldExceed(now, w) == !oracle.fits(now, w, limit));
                }
                if (op % 97 == 0)
                    window.evictExpired(now); // eviction must never change answers
            }
        }
    }
}

TEST_CASE("window entries expire exactly at atMs + windowMs", "[ratelimit]") {
    SlidingWindow window(5, 6000);
    window.record(1000, 5);
    REQUIRE(window.usedAt(1000) == 5);
    REQUIRE(window.usedAt(6999) == 5);
    REQUIRE(window.wouldExceed(6999, 1));
    REQUIRE(window.usedAt(7000) == 0);
    REQUIRE_FALSE(window.wouldExceed(7000, 5));
}

TEST_CASE("earliest admit instant is tight", "[ratelimit]") {
    SECTION("empty window admits immediately") {
        SlidingWindow window(10, 6000);
        REQUIRE(window.earliestAdmitMs(500, 10) == 500);
    }
    SECTION("full window admits at the first expiry") {
        SlidingWindow window(3, 1000);
        window.record(100, 3);
        auto at = window.earliestAdmitMs(200, 1);
        REQUIRE(at.has_value());
        REQUIRE(*at == 1100);
        // Tightness: one ms earlier the admission would still exceed.
        REQUIRE(window.wouldExceed(*at - 1, 1));
        REQUIRE_FALSE(window.wouldExceed(*at, 1));
    }
    SECTION("partial frees accumulate across entries") {
        SlidingWindow window(10, 1000);
        window.record(100, 4);
        window.record(300, 4);
        window.record(500, 2);
        // Needs 6 free: the first two entries (8 total) must both age out.
        auto at = window.earliestAdmitMs(600, 6);
        REQUIRE(at.has_value());
        REQUIRE(*at == 1300);
        REQUIRE(window.wouldExceed(*at - 1, 6));
        REQUIRE_FALSE(window.wouldExceed(*at, 6));
    }
    SECTION("weight above the limit can never fit") {
        SlidingWindow window(10, 1000);
        REQUIRE_FALSE(window.earliestAdmitMs(0, 11).has_value());
    }
    SECTION("randomized tightness against the oracle") {
        std::mt19937_64 rng(4242);
        SlidingWindow window(12, 2000);
        WindowOracle oracle{2000, {}};
        int64_t now = 0;
        std::uniform_int_distribution<int64_t> step(0, 700);
        std::uniform_int_distribution<long> weight(1, 6);
        for (int op = 0; op < 1500; ++op) {
            now += step(rng);
            long w = weight(rng);
            if (op % 2 == 0) {
                window.record(now, w);
                oracle.events.emplace_back(now, w);
            } else {
                auto at = window.earliestAdmitMs(now, w);
                REQUIRE(at.has_value());
                REQUIRE(*at >= now);
                REQUIRE(oracle.fits(*at, w, 12));
                if (*at > now)
                    REQUIRE_FALSE(oracle.fits(*at - 1, w, 12));
            }
        }
    }
}

TEST_CASE("retry-after is a ceiling in whole seconds, at least one", "[ratelimit]") {
    SlidingWindow window(1, 60000);
    window.record(0, 1);
    // Admission frees at t=60000; from t=59500 that is 500ms away, still 1s.
    REQUIRE(window.retryAfterSeconds(59500, 1) == 1);
    REQUIRE(window.retryAfterSeconds(0, 1) == 60);
    REQUIRE(window.retryAfterSeconds(1, 1) == 60);
    REQUIRE(window.retryAfterSeconds(60000, 1) == 0);
    // Infeasible weight: answer with the full window.
    REQUIRE(window.retryAfterSeconds(0, 2) == 60);
}

TEST_CASE("pause threshold is max(2, ceil(10% of limit))", "[ratelimit]") {
    REQUIRE(pauseThreshold(1) == 2);
    REQUIRE(pauseThreshold(9) == 2);
    REQUIRE(pauseThreshold(20) == 2);
    REQUIRE(pauseThreshold(21) == 3);
    REQUIRE(pauseThreshold(50) == 5);
    REQUIRE(pauseThreshold(100) == 10);
    REQUIRE(pauseThreshold(101) == 11);
}

TEST_CASE("reset durations parse like Go duration strings", "[ratelimit]") {
    REQUIRE(parseResetDurationMs("600ms") == 600);
    REQUIRE(parseResetDurationMs("1.5s") == 1500);
    REQUIRE(parseResetDurationMs("6m0s") == 360000);
    REQUIRE(parseResetDurationMs("2m") == 120000);
    REQUIRE(parseResetDurationMs("1h2m3.5s") == 3723500);
    REQUIRE(parseResetDurationMs("30") == 30000); // bare numbers are seconds
    REQUIRE(parseResetDurationMs("0s") == 0);
    REQUIRE_FALSE(parseResetDurationMs("").has_value());
    REQUIRE_FALSE(parseResetDurationMs("abc").has_value());
    REQUIRE_FALSE(parseResetDurationMs("5x").has_value());
}

TEST_CASE("rate gate blocks until the window frees", "[ratelimit][slow]") {
    RateGate gate(2, 1'000'000, 600);
    auto t0 = std::chrono::steady_clock::now();
    REQUIRE(gate.waitAndRecord(1) == RateGate::Admit::Ok);
    REQUIRE(gate.waitAndRecord(1) == RateGate::Admit::Ok);
    REQUIRE(gate.waitAndRecord(1) == RateGate::Admit::Ok); // third must wait
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
    REQUIRE(elapsed >= 450);
    REQUIRE(elapsed < 5000);
}

TEST_CASE("rate gate enforces the token window too", "[ratelimit][slow]") {
    RateGate gate(1000, 10, 500);
    auto t0 = std::chrono::steady_clock::now();
    REQUIRE(gate.waitAndRecord(6) == RateGate::Admit::Ok);
    REQUIRE(gate.waitAndRecord(6) == RateGate::Admit::Ok); // 12 > 10: waits
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
    REQUIRE(elapsed >= 350);
}

TEST_CASE("infeasible token weight is refused up front", "[ratelimit]") {
    RateGate gate(1000, 10, 60000);
    auto t0 = std::chrono::steady_clock::now();
    REQUIRE(gate.waitAndRecord(11) == RateGate::Admit::InfeasibleWeight);
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
    REQUIRE(elapsed < 1000); // refusal, not a 60s sleep
}

TEST_CASE("shutdown releases blocked waiters", "[ratelimit][slow]") {
    RateGate gate(1, 1'000'000, 60000);
    REQUIRE(gate.waitAndRecord(1) == RateGate::Admit::Ok);
    std::atomic<int> result{-1};
    std::thread waiter([&] {
        auto r = gate.waitAndRecord(1);
        result.store(static_cast<int>(r));
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    gate.shutdown();
    waiter.join();
    REQUIRE(result.load() == static_cast<int>(RateGate::Admit::Shutdown));
    REQUIRE(gate.waitAndRecord(1) == RateGate::Admit::Shutdown);
}

TEST_CASE("global pause delays every admission; longest pause wins", "[ratelimit][slow]") {
    RateGate gate(1000, 1'000'000, 60000);
    int64_t now = steadyNowMs();
    gate.pauseAllUntil(now + 400);
    gate.pauseAllUntil(now + 100); // shorter pause must not shorten the longer
    auto t0 = std::chrono::steady_clock::now();
    REQUIRE(gate.waitAndRecord(1) == RateGate::Admit::Ok);
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
    REQUIRE(elapsed >= 300);
}

TEST_CASE("provider headers showing low remaining trigger a pause", "[ratelimit][slow]") {
    RateGate gate(50, 1'000'000, 60000); // request threshold: max(2, 5) = 5
    RateHeaderInfo info;
    info.limitRequests = 50;
    info.remainingRequests = 4; // at or below threshold
    info.resetRequestsMs = 400;
    gate.observeHeaders(info);
    auto t0 = std::chrono::steady_clock::now();
    REQUIRE(gate.waitAndRecord(1) == RateGate::Admit::Ok);
    auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
    REQUIRE(elapsed >= 300);

    // Plenty remaining: no pause.
    RateHeaderInfo healthy;
    healthy.limitRequests = 50;
    healthy.remainingRequests = 40;
    healthy.resetRequestsMs = 5000;
    gate.observeHeaders(healthy);
    t0 = std::chrono::steady_clock::now();
    REQUIRE(gate.waitAndRecord(1) == RateGate::Admit::Ok);
    elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    REQUIRE(elapsed < 2000);
}

TEST_CASE("gate usage reflects both windows", "[ratelimit]") {
    RateGate gate(10, 100, 60000);
    REQUIRE(gate.waitAndRecord(25) == RateGate::Admit::Ok);
    REQUIRE(gate.waitAndRecord(25) == RateGate::Admit::Ok);
    auto u = gate.usage();
    REQUIRE(u.requestsUsed == 2);
    REQUIRE(u.tokensUsed == 50);
    REQUIRE(u.requestLimit == 10);
    REQUIRE(u.tokenLimit == 100);
}
