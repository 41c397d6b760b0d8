#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include <hivemind/budget.hpp>
#include <hivemind/clock.hpp>
#include <hivemind/ratelimit.hpp>

namespace hivemind {

// ──────────────────────────────────────────────────────────────────────────────
// MockUpstream: a configurable stand-in for a rate-limited LLM API.
//
// Implemented directly on POSIX sockets because the failure modes under test
// need byte-level control no HTTP framework hands out: genuine TCP resets
// (SO_LINGER zero + close) for over-capacity connections and injected drops,
// and mid-stream truncation of chunked SSE responses.
//
// Per-request decision order:
//   1. connection cap: connections beyond max_connections are reset outright
//   2. random reset draw (pReset)
//   3. random 502 draw (p502)
//   4. sliding-window RPM check: refusal carries Retry-After, the time until
//      the oldest window entry expires
//   5. serve after base + jitter + spike latency, JSON or SSE per the request
//
// Every response closes its connection, so one connection serves one request
// and the cap is exactly a concurrent-request cap.
//
// Debug headers honored for deterministic tests (counted in stats normally):
//   x-mock-force-status: <n>     respond with status n instead of drawing
//   x-mock-force-reset: 1        reset this connection after reading
//   x-mock-truncate-stream: 1    drop the connection mid-SSE
//   x-mock-latency-ms: <n>       override service latency
// ──────────────────────────────────────────────────────────────────────────────

struct MockSpike {
    int64_t periodMs = 0;    // 0 disables
    int64_t magnitudeMs = 0; // added latency while the spike is active
    int64_t durationMs = 0;  // active part of each period; 0 means period/2
};

struct MockConfig {
    std::string host = "127.0.0.1";
    int port = 0; // 0 picks an ephemeral port
    long rpm = 60;
    int64_t windowMs = 60000;
    int maxConnections = 5;
    double p502 = 0.0;
    double pReset = 0.0;
    int64_t latencyBaseMs = 0;
    int64_t latencyJitterMs = 0;
    MockSpike spike;
    std::string format = "anthropic"; // or "openai"
    uint64_t seed = 1;
    size_t completionChars = 1000; // synthetic completion length
    int64_t streamChunkGapMs = 5;
    int streamContentChunks = 3;
};

struct MockStatsSnapshot {
    uint64_t received = 0;
    uint64_t served = 0;
    uint64_t streams = 0;
    uint64_t resets = 0;
    uint64_t injected502 = 0;
    uint64_t injected429 = 0;
    uint64_t forced = 0;
    int active = 0;
    int maxObservedConcurrency = 0;
    long windowUsed = 0;
};

class MockUpstream {
public:
    explicit MockUpstream(MockConfig cfg)
        : cfg_(std::move(cfg)), rng_(cfg_.seed ? cfg_.seed : 1),
          window_(cfg_.rpm, cfg_.windowMs) {}

    ~MockUpstream() { stop(); }

    bool start() {
        listenFd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listenFd_ < 0)
            return false;
        int one = 1;
        ::setsockopt(listenFd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<uint16_t>(cfg_.port));
        ::inet_pton(AF_INET, cfg_.host.c_str(), &addr.sin_addr);
        if (::bind(listenFd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
            ::listen(listenFd_, 256) != 0) {
            ::close(listenFd_);
            listenFd_ = -1;
            return false;
        }
        socklen_t len = sizeof(addr);
        ::getsockname(listenFd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        startMs_ = steadyNowMs();
        stopping_.store(false);
        acceptThread_ = std::thread([this] { acceptLoop(); });
        return true;
    }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true))
            return;
        if (listenFd_ >= 0) {
            ::shutdown(listenFd_, SHUT_RDWR);
            ::close(listenFd_);
            listenFd_ = -1;
        }
        if (acceptThread_.joinable())
            acceptThread_.join();
        // Handler threads are detached; wait for them to drain.
        int64_t deadline = steadyNowMs() + 5000;
        while (handlers_.load() > 0 && steadyNowMs() < deadline)
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }

    int port() const { return port_; }
    const MockConfig& config() const { return cfg_; }

    // Clears counters and the rate window, reseeds the RNG, and applies any
    // provided config overrides. Only safe knobs are reconfigurable live.
    void reset(const nlohmann::json& overrides = {}) {
        std::scoped_lock lock(rngMu_, windowMu_);
        if (overrides.is_object()) {
            if (overrides.contains("seed"))
                cfg_.seed = overrides["seed"].get<uint64_t>();
            if (overrides.contains("p502"))
                cfg_.p502 = overrides["p502"].get<double>();
            if (overrides.contains("p_reset"))
                cfg_.pReset = overrides["p_reset"].get<double>();
            if (overrides.contains("rpm")) {
                cfg_.rpm = overrides["rpm"].get<long>();
                window_.setLimit(cfg_.rpm);
            }
            if (overrides.contains("latency_base_ms"))
                cfg_.latencyBaseMs = overrides["latency_base_ms"].get<int64_t>();
            if (overrides.contains("latency_jitter_ms"))
                cfg_.latencyJitterMs = overrides["latency_jitter_ms"].get<int64_t>();
            if (overrides.contains("max_connections"))
                cfg_.maxConnections = overrides["max_connections"].get<int>();
        }
        rng_.seed(cfg_.seed ? cfg_.seed : 1);
        window_.clear();
        received_ = served_ = streams_ = resets_ = injected502_ = injected429_ = forced_ = 0;
        maxObserved_.store(0);
        startMs_ = steadyNowMs();
    }

    MockStatsSnapshot stats() const {
        MockStatsSnapshot s;
        s.received = received_.load();
        s.served = served_.load();
        s.streams = streams_.load();
        s.resets = resets_.load();
        s.injected502 = injected502_.load();
        s.injected429 = injected429_.load();
        s.forced = forced_.load();
        s.active = active_.load();
        s.maxObservedConcurrency = maxObserved_.load();
        {
            std::lock_guard<std::mutex> lock(windowMu_);
            s.windowUsed = window_.usedAt(steadyNowMs());
        }
        return s;
    }

    nlohmann::json statsJson() const {
        auto s = stats();
        return {{"received", s.received},
                {"served", s.served},
                {"streams", s.streams},
                {"resets", s.resets},
                {"injected_502", s.injected502},
                {"injected_429", s.injected429},
                {"forced", s.forced},
                {"active", s.active},
                {"max_observed_concurrency", s.maxObservedConcurrency},
                {"window_used", s.windowUsed},
                {"config",
                 {{"rpm", cfg_.rpm},
                  {"window_ms", cfg_.windowMs},
                  {"max_connections", cfg_.maxConnections},
                  {"p502", cfg_.p502},
                  {"p_reset", cfg_.pReset},
                  {"format", cfg_.format}}}};
    }

private:
    struct ParsedRequest {
        std::string method;
        std::string path;
        std::map<std::string, std::string> headers; // lowercased names
        std::string body;
        bool ok = false;
    };

    void acceptLoop() {
        while (!stopping_.load()) {
            int fd = ::accept(listenFd_, nullptr, nullptr);
            if (fd < 0) {
                if (stopping_.load())
                    break;
                continue;
            }
            handlers_.fetch_add(1);
            std::thread([this, fd] {
                handleConnection(fd);
                handlers_.fetch_sub(1);
            }).detach();
        }
    }

    static void abruptClose(int fd) {
        linger lin{1, 0}; // RST on close instead of FIN
        ::setsockopt(fd, SOL_SOCKET, SO_LINGER, &lin, sizeof(lin));
        ::close(fd);
    }

    static bool sendAll(int fd, const char* data, size_t len) {
        size_t off = 0;
        while (off < len) {
            ssize_t n = ::send(fd, data + off, len - off, MSG_NOSIGNAL);
            if (n <= 0)
                return false;
            off += static_cast<size_t>(n);
        }
        return true;
    }

    static bool sendAll(int fd, const std::string& data) {
        return sendAll(fd, data.data(), data.size());
    }

    void handleConnection(int fd) {
        int now = active_.fetch_add(1) + 1;
        int seen = maxObserved_.load();
        while (now > seen && !maxObserved_.compare_exchange_weak(seen, now)) {
        }

        // Over-capacity connections are reset before any bytes are read,
        // the way an overloaded listener sheds load.
        if (now > cfg_.maxConnections) {
            resets_.fetch_add(1);
            abruptClose(fd);
            active_.fetch_sub(1);
            return;
        }

        timeval tv{10, 0};
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));

        ParsedRequest req = readRequest(fd);
        if (!req.ok) {
            ::close(fd);
            active_.fetch_sub(1);
            return;
        }

        if (req.path == "/__mock/stats") {
            writeJson(fd, 200, statsJson().dump(2));
        } else if (req.path == "/__mock/reset") {
            auto overrides = nlohmann::json::parse(req.body, nullptr, false);
            reset(overrides.is_object() ? overrides : nlohmann::json::object());
            writeJson(fd, 200, "{\"ok\":true}");
        } else {
            handleApi(fd, req);
        }
        active_.fetch_sub(1);
    }

    ParsedRequest readRequest(int fd) {
        ParsedRequest req;
        std::string buf;
        buf.reserve(4096);
        char tmp[4096];
        size_t headerEnd = std::string::npos;
        while (buf.size() < (1u << 16)) {
            headerEnd = buf.find("\r\n\r\n");
            if (headerEnd != std::string::npos)
                break;
            ssize_t n = ::recv(fd, tmp, sizeof(tmp), 0);
            if (n <= 0)
                return req;
            buf.append(tmp, static_cast<size_t>(n));
        }
        if (headerEnd == std::string::npos)
            return req;

        size_t lineEnd = buf.find("\r\n");
        std::string requestLine = buf.substr(0, lineEnd);
        size_t sp1 = requestLine.find(' ');
        size_t sp2 = requestLine.find(' ', sp1 + 1);
        if (sp1 == std::string::npos || sp2 == std::string::npos)
            return req;
        req.method = requestLine.substr(0, sp1);
        req.path = requestLine.substr(sp1 + 1, sp2 - sp1 - 1);

        size_t pos = lineEnd + 2;
        while (pos < headerEnd) {
            size_t eol = buf.find("\r\n", pos);
            std::string line = buf.substr(pos, eol - pos);
            pos = eol + 2;
            size_t colon = line.find(':');
            if (colon == std::string::npos)
                continue;
            std::string name = line.substr(0, colon);
            for (auto& c : name)
                c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            size_t vstart = line.find_first_not_of(' ', colon + 1);
            req.headers[name] =
                vstart == std::string::npos ? std::string() : line.substr(vstart);
        }

        size_t contentLength = 0;
        if (auto it = req.headers.find("content-length"); it != req.headers.end())
            contentLength = std::stoul(it->second);
        if (contentLength > (10u << 20))
            return req;
        req.body = buf.substr(headerEnd + 4);
        while (req.body.size() < contentLength) {
            ssize_t n = ::recv(fd, tmp, sizeof(tmp), 0);
            if (n <= 0)
                return req;
            req.body.append(tmp, static_cast<size_t>(n));
        }
        req.ok = true;
        return req;
    }

    int64_t spikeExtraMs(int64_t nowMs) const {
        if (cfg_.spike.periodMs <= 0 || cfg_.spike.magnitudeMs <= 0)
            return 0;
        int64_t duration =
            cfg_.spike.durationMs > 0 ? cfg_.spike.durationMs : cfg_.spike.periodMs / 2;
        int64_t phase = (nowMs - startMs_) % cfg_.spike.periodMs;
        return phase < duration ? cfg_.spike.magnitudeMs : 0;
    }

    void handleApi(int fd, const ParsedRequest& req) {
        received_.fetch_add(1);

        auto header = [&](const char* name) -> std::optional<std::string> {
            auto it = req.headers.find(name);
            if (it == req.headers.end())
                return std::nullopt;
            return it->second;
        };

        if (header("x-mock-force-reset")) {
            forced_.fetch_add(1);
            resets_.fetch_add(1);
            abruptClose(fd);
            return;
        }

        std::optional<int> forceStatus;
        if (auto v = header("x-mock-force-status")) {
            try {
                forceStatus = std::stoi(*v);
            } catch (...) {
            }
        }

        bool wantStream = false;
        {
            auto parsed = nlohmann::json::parse(req.body, nullptr, false);
            if (parsed.is_object())
                wantStream = parsed.value("stream", false);
        }

        // Random failure draws, serialized for reproducibility under a seed.
        bool drawReset = false, draw502 = false;
        int64_t jitterMs = 0;
        {
            std::lock_guard<std::mutex> lock(rngMu_);
            std::uniform_real_distribution<double> uni(0.0, 1.0);
            if (!forceStatus) {
                drawReset = cfg_.pReset > 0.0 && uni(rng_) < cfg_.pReset;
                draw502 = cfg_.p502 > 0.0 && uni(rng_) < cfg_.p502;
            }
            if (cfg_.latencyJitterMs > 0) {
                std::uniform_int_distribution<int64_t> ji(0, cfg_.latencyJitterMs);
                jitterMs = ji(rng_);
            }
        }

        if (drawReset) {
            resets_.fetch_add(1);
            abruptClose(fd);
            return;
        }
        if (draw502) {
            injected502_.fetch_add(1);
            writeJson(fd, 502, R"({"error":{"type":"bad_gateway","message":"upstream worker crashed"}})");
            return;
        }

        // RPM window: refusals advertise when to come back and consume no
        // window capacity.
        long retryAfterSec = 0;
        bool throttled = false;
        std::string rateHeaders;
        {
            std::lock_guard<std::mutex> lock(windowMu_);
            int64_t now = steadyNowMs();
            window_.evictExpired(now);
            if (!forceStatus && window_.wouldExceed(now, 1)) {
                throttled = true;
                retryAfterSec = window_.retryAfterSeconds(now, 1);
            } else {
                window_.record(now, 1);
            }
            long used = window_.usedAt(now);
            long remaining = std::max(0L, cfg_.rpm - used);
            long resetSec = 0;
            if (auto expiry = window_.oldestExpiryMs(now))
                resetSec = std::max<long>(1, static_cast<long>((*expiry - now + 999) / 1000));
            rateHeaders = "x-ratelimit-limit-requests: " + std::to_string(cfg_.rpm) +
                          "\r\nx-ratelimit-remaining-requests: " + std::to_string(remaining) +
                          "\r\nx-ratelimit-reset-requests: " + std::to_string(resetSec) +
                          "s\r\n";
        }

        if (throttled) {
            injected429_.fetch_add(1);
            std::string extra =
                rateHeaders + "retry-after: " + std::to_string(retryAfterSec) + "\r\n";
            writeJson(fd, 429,
                      R"({"error":{"type":"rate_limit_error","message":"requests per window exceeded"}})",
                      extra);
            return;
        }

        if (forceStatus && *forceStatus != 200) {
            forced_.fetch_add(1);
            std::string extra = rateHeaders;
            if (auto v = header("x-mock-retry-after"))
                extra += "retry-after: " + *v + "\r\n";
            writeJson(fd, *forceStatus,
                      R"({"error":{"type":"forced","message":"forced status"}})", extra);
            return;
        }

        int64_t latency = cfg_.latencyBaseMs + jitterMs + spikeExtraMs(steadyNowMs());
        if (auto v = header("x-mock-latency-ms")) {
            try {
                latency = std::stoll(*v);
            } catch (...) {
            }
        }
        if (latency > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(latency));

        long inputTokens = estimateTokensFromChars(req.body.size());
        std::string completion = completionText();
        long outputTokens = estimateTokensFromChars(completion.size());

        // Counters move before the write: a client holding a complete response
        // must always find it reflected in the stats.
        if (wantStream) {
            streams_.fetch_add(1);
            bool truncate = header("x-mock-truncate-stream").has_value();
            if (!truncate)
                served_.fetch_add(1);
            writeStream(fd, inputTokens, outputTokens, completion, rateHeaders, truncate);
        } else {
            served_.fetch_add(1);
            writeJson(fd, 200, completionBody(inputTokens, outputTokens, completion),
                      rateHeaders);
        }
    }

    std::string completionText() const {
        static const std::string kLorem =
            "Lorem ipsum dolor sit amet, consectetur adipiscing elit, sed do eiusmod tempor "
            "incididunt ut labore et dolore magna aliqua. Ut enim ad minim veniam, quis "
            "nostrud exercitation ullamco laboris nisi ut aliquip ex ea commodo consequat. ";
        std::string text;
        while (text.size() < cfg_.completionChars)
            text += kLorem;
        text.resize(cfg_.completionChars);
        return text;
    }

    std::string completionBody(long inputTokens, long outputTokens,
                               const std::string& completion) const {
        nlohmann::json body;
        if (cfg_.format == "openai") {
            body = {{"id", "chatcmpl-mock"},
                    {"object", "chat.completion"},
                    {"choices",
                     nlohmann::json::array(
                         {{{"index", 0},
                           {"message", {{"role", "assistant"}, {"content", completion}}},
                           {"finish_reason", "stop"}}})},
                    {"usage",
                     {{"prompt_tokens", inputTokens},
                      {"completion_tokens", outputTokens},
                      {"total_tokens", inputTokens + outputTokens}}}};
        } else {
            body = {{"id", "msg_mock"},
                    {"type", "message"},
                    {"role", "assistant"},
                    {"content",
                     nlohmann::json::array({{{"type", "text"}, {"text", completion}}})},
                    {"stop_reason", "end_turn"},
                    {"usage",
                     {{"input_tokens", inputTokens}, {"output_tokens", outputTokens}}}};
        }
        return body.dump();
    }

    void writeJson(int fd, int status, const std::string& body,
                   const std::string& extraHeaders = "") {
        std::string head = "HTTP/1.1 " + std::to_string(status) + " " + reasonPhrase(status) +
                           "\r\ncontent-type: application/json\r\n" + extraHeaders +
                           "content-length: " + std::to_string(body.size()) +
                           "\r\nconnection: close\r\n\r\n";
        sendAll(fd, head) && sendAll(fd, body);
        ::close(fd);
    }

    static bool sendChunk(int fd, const std::string& data) {
        char head[16];
        int n = std::snprintf(head, sizeof(head), "%zx\r\n", data.size());
        return sendAll(fd, head, static_cast<size_t>(n)) && sendAll(fd, data) &&
               sendAll(fd, "\r\n", 2);
    }

    // Chunked SSE stream in the configured dialect. Truncation drops the
    // connection abruptly after the first content delta, before any terminal
    // chunk, so clients observe a mid-stream transport failure.
    void writeStream(int fd, long inputTokens, long outputTokens,
                     const std::string& completion, const std::string& rateHeaders,
                     bool truncate) {
        std::string head =
            "HTTP/1.1 200 OK\r\ncontent-type: text/event-stream\r\n" + rateHeaders +
            "transfer-encoding: chunked\r\nconnection: close\r\n\r\n";
        if (!sendAll(fd, head)) {
            ::close(fd);
            return;
        }

        bool openaiStyle = cfg_.format == "openai";
        int parts = std::max(1, cfg_.streamContentChunks);
        size_t partLen = (completion.size() + parts - 1) / parts;

        auto event = [&](const std::string& name, const nlohmann::json& data) {
            std::string frame;
            if (!openaiStyle && !name.empty())
                frame += "event: " + name + "\n";
            frame += "data: " + data.dump() + "\n\n";
            return sendChunk(fd, frame);
        };

        if (openaiStyle) {
            event("", {{"id", "chatcmpl-mock"},
                       {"object", "chat.completion.chunk"},
                       {"choices",
                        nlohmann::json::array(
                            {{{"index", 0}, {"delta", {{"role", "assistant"}}}}})}});
        } else {
            event("message_start",
                  {{"type", "message_start"},
                   {"message",
                    {{"id", "msg_mock"},
                     {"type", "message"},
                     {"role", "assistant"},
                     {"content", nlohmann::json::array()},
                     {"usage", {{"input_tokens", inputTokens}, {"output_tokens", 1}}}}}});
        }

        for (int i = 0; i < parts; ++i) {
            std::string piece = completion.substr(
                std::min(completion.size(), static_cast<size_t>(i) * partLen), partLen);
            bool sent;
            if (openaiStyle) {
                sent = event("", {{"id", "chatcmpl-mock"},
                                  {"object", "chat.completion.chunk"},
                                  {"choices",
                                   nlohmann::json::array(
                                       {{{"index", 0}, {"delta", {{"content", piece}}}}})}});
            } else {
                sent = event("content_block_delta",
                             {{"type", "content_block_delta"},
                              {"index", 0},
                              {"delta", {{"type", "text_delta"}, {"text", piece}}}});
            }
            if (!sent) {
                ::close(fd);
                return;
            }
            if (truncate) {
                resets_.fetch_add(1);
                abruptClose(fd);
                return;
            }
            if (cfg_.streamChunkGapMs > 0)
                std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.streamChunkGapMs));
        }

        if (openaiStyle) {
            event("", {{"id", "chatcmpl-mock"},
                       {"object", "chat.completion.chunk"},
                       {"choices",
                        nlohmann::json::array({{{"index", 0},
                                                {"delta", nlohmann::json::object()},
                                                {"finish_reason", "stop"}}})},
                       {"usage",
                        {{"prompt_tokens", inputTokens},
                         {"completion_tokens", outputTokens},
                         {"total_tokens", inputTokens + outputTokens}}}});
            sendChunk(fd, "data: [DONE]\n\n");
        } else {
            event("message_delta", {{"type", "message_delta"},
                                    {"delta", {{"stop_reason", "end_turn"}}},
                                    {"usage", {{"output_tokens", outputTokens}}}});
            event("message_stop", {{"type", "message_stop"}});
        }
        sendAll(fd, "0\r\n\r\n", 5);
        ::close(fd);
    }

    static const char* reasonPhrase(int status) {
        switch (status) {
        case 200:
            return "OK";
        case 429:
            return "Too Many Requests";
        case 500:
            return "Internal Server Error";
        case 502:
            return "Bad Gateway";
        case 503:
            return "Service Unavailable";
        case 529:
            return "Overloaded";
        default:
            return "Status";
        }
    }

    MockConfig cfg_;
    int listenFd_ = -1;
    int port_ = 0;
    int64_t startMs_ = 0;
    std::atomic<bool> stopping_{true};
    std::thread acceptThread_;
    std::atomic<int> handlers_{0};

    std::atomic<int> active_{0};
    std::atomic<int> maxObserved_{0};

    std::mutex rngMu_;
    std::mt19937_64 rng_;

    mutable std::mutex windowMu_;
    SlidingWindow window_;

    std::atomic<uint64_t> received_{0}, served_{0}, streams_{0}, resets_{0}, injected502_{0},
        injected429_{0}, forced_{0};
};

} // namespace hivemind
