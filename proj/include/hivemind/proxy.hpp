#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include <hivemind/admission.hpp>
#include <hivemind/backpressure.hpp>
#include <hivemind/budget.hpp>
#include <hivemind/clock.hpp>
#include <hivemind/http_util.hpp>
#include <hivemind/providers.hpp>
#include <hivemind/ratelimit.hpp>
#include <hivemind/retry.hpp>
#include <hivemind/tokens.hpp>

namespace hivemind {

// ──────────────────────────────────────────────────────────────────────────────
// HivemindProxy: transparent scheduling proxy between agent clients and one
// rate-limited upstream.
//
// Request pipeline, in order:
//   1. circuit breaker   - fast-fail 503 while the upstream is presumed down
//   2. token budget      - per-agent ceilings, warn header, kill + checkpoint
//   3. admission gate    - bounded concurrency, FIFO, AIMD-resized
//   4. rate gate         - RPM/TPM sliding windows plus provider-header pauses
//   5. send with retry   - transparent backoff; the admission slot is held
//                          across attempts and each attempt re-passes the
//                          rate gate
//
// Responses stream through unbuffered: SSE bytes are forwarded chunk by chunk
// as they arrive, with token usage scraped in flight. Failures before any
// byte has been forwarded are retried invisibly; after forwarding begins they
// surface as truncation, because replaying a half-delivered stream would
// duplicate content the client already consumed.
// ──────────────────────────────────────────────────────────────────────────────

struct ProxyConfig {
    std::string listenHost = "127.0.0.1";
    int listenPort = 8765; // 0 picks an ephemeral port
    std::string upstreamBase;

    ProviderProfile profile; // resolved from upstreamBase when name is empty

    bool enableAdmission = true;
    bool enableRateLimit = true;
    bool enableBackpressure = true;
    bool enableRetry = true;
    bool enableBudget = true;

    // Zero means "take the profile value".
    long rpm = 0;
    long tpm = 0;
    int64_t windowMs = 60000;
    double maxConcurrency = 0.0;
    double latencyTargetMs = 0.0;

    BackpressureConfig bp; // cMax and latency target resolved at construction
    RetryPolicy retry;

    long budgetPoolTokens = 10000000;
    size_t maxAgents = 100;
    std::string checkpointDir; // empty disables checkpoint files

    int serverThreads = 96;
    int64_t upstreamTimeoutMs = 120000;
    uint64_t seed = 0; // retry jitter; 0 seeds from entropy
};

struct ProxyMetricsSnapshot {
    uint64_t received = 0;
    uint64_t proxied = 0;
    uint64_t retries = 0;
    uint64_t circuitFastFails = 0;
    uint64_t budgetDenials = 0;
    uint64_t budgetWarnings = 0;
    uint64_t streams = 0;
    uint64_t upstreamErrors = 0;
    long tokensIn = 0;
    long tokensOut = 0;
};

class HivemindProxy {
public:
    explicit HivemindProxy(ProxyConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.profile.name.empty())
            cfg_.profile = detectProvider(cfg_.upstreamBase);
        if (cfg_.rpm <= 0)
            cfg_.rpm = cfg_.profile.rpm;
        if (cfg_.tpm <= 0)
            cfg_.tpm = cfg_.profile.tpm;
        if (cfg_.maxConcurrency <= 0)
            cfg_.maxConcurrency = cfg_.profile.maxConcurrency;
        if (cfg_.latencyTargetMs <= 0)
            cfg_.latencyTargetMs = cfg_.profile.latencyTargetMs;
        cfg_.bp.cMax = cfg_.maxConcurrency;
        cfg_.bp.latencyTargetMs = cfg_.latencyTargetMs;

        parseUpstream();

        gate_ = std::make_unique<AdmissionGate>(
            cfg_.enableAdmission ? cfg_.maxConcurrency : 1e9);
        rate_ = std::make_unique<RateGate>(cfg_.rpm, cfg_.tpm, cfg_.windowMs);
        bp_ = std::make_unique<BackpressureController>(cfg_.bp);
        budget_ = std::make_unique<BudgetManager>(cfg_.budgetPoolTokens, cfg_.maxAgents);
        if (cfg_.enableAdmission && cfg_.enableBackpressure)
            bp_->onLimitChange([this](double c) { gate_->setMaxConcurrency(c); });
        if (!cfg_.checkpointDir.empty())
            installCheckpointWriter();
        rng_.seed(cfg_.seed ? cfg_.seed : std::random_device{}());
    }

    ~HivemindProxy() { stop(); }

    bool start() {
        server_ = std::make_unique<httplib::Server>();
        int threads = cfg_.serverThreads;
        server_->new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
        server_->set_keep_alive_max_count(1024);
        server_->set_read_timeout(300, 0);
        server_->set_write_timeout(300, 0);

        server_->Get("/hm/metrics", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(metricsJson().dump(2), "application/json");
        });

        auto passthrough = [this](const httplib::Request& req, httplib::Response& res) {
            handleProxy(req, res);
        };
        server_->Get(".*", passthrough);
        server_->Post(".*", passthrough);
        server_->Put(".*", passthrough);
        server_->Patch(".*", passthrough);
        server_->Delete(".*", passthrough);
        server_->Options(".*", passthrough);

        if (cfg_.listenPort == 0) {
            port_ = server_->bind_to_any_port(cfg_.listenHost);
            if (port_ < 0)
                return false;
        } else {
            if (!server_->bind_to_port(cfg_.listenHost, cfg_.listenPort))
                return false;
            port_ = cfg_.listenPort;
        }
        serverThread_ = std::thread([this] { server_->listen_after_bind(); });
        server_->wait_until_ready();
        return true;
    }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true))
            return;
        if (server_)
            server_->stop();
        rate_->shutdown();
        gate_->shutdown();
        if (serverThread_.joinable())
            serverThread_.join();
        int64_t deadline = steadyNowMs() + 5000;
        while (workers_.load() > 0 && steadyNowMs() < deadline)
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }

    int port() const { return port_; }
    const ProxyConfig& config() const { return cfg_; }

    AdmissionGate& admissionGate() { return *gate_; }
    BackpressureController& backpressure() { return *bp_; }
    BudgetManager& budget() { return *budget_; }
    RateGate& rateGate() { return *rate_; }

    ProxyMetricsSnapshot metrics() const {
        ProxyMetricsSnapshot m;
        m.received = received_.load();
        m.proxied = proxied_.load();
        m.retries = retries_.load();
        m.circuitFastFails = circuitFastFails_.load();
        m.budgetDenials = budgetDenials_.load();
        m.budgetWarnings = budgetWarnings_.load();
        m.streams = streams_.load();
        m.upstreamErrors = upstreamErrors_.load();
        m.tokensIn = tokensIn_.load();
        m.tokensOut = tokensOut_.load();
        return m;
    }

    nlohmann::json metricsJson() const {
        auto m = metrics();
        auto gs = gate_->stats();
        auto ru = rate_->usage();
        auto bs = bp_->snapshot();
        nlohmann::json statuses = nlohmann::json::object();
        {
            std::lock_guard<std::mutex> lock(statusMu_);
            for (const auto& [code, count] : statusCounts_)
                statuses[std::to_string(code)] = count;
        }
        nlohmann::json lat;
        {
            std::lock_guard<std::mutex> lock(latMu_);
            if (!latencies_.empty()) {
                std::vector<double> v(latencies_.begin(), latencies_.end());
                std::sort(v.begin(), v.end());
                double sum = 0;
                for (double x : v)
                    sum += x;
                lat = {{"count", v.size()},
                       {"mean_ms", sum / v.size()},
                       {"p50_ms", v[v.size() / 2]},
                       {"p95_ms", v[std::min(v.size() - 1, v.size() * 95 / 100)]},
                       {"max_ms", v.back()}};
            } else {
                lat = {{"count", 0}};
            }
        }
        return {{"received", m.received},
                {"proxied", m.proxied},
                {"retries", m.retries},
                {"circuit_fast_fails", m.circuitFastFails},
                {"upstream_errors", m.upstreamErrors},
                {"streams", m.streams},
                {"responses", statuses},
                {"admission",
                 {{"active", gs.active},
                  {"waiting", gs.waiting},
                  {"limit", gs.limit},
                  {"effective_limit", gs.effectiveLimit},
                  {"high_water", gs.highWater},
                  {"total_admitted", gs.totalAdmitted}}},
                {"rate",
                 {{"requests_used", ru.requestsUsed},
                  {"requests_limit", ru.requestLimit},
                  {"tokens_used", ru.tokensUsed},
                  {"tokens_limit", ru.tokenLimit},
                  {"paused", ru.paused},
                  {"pause_remaining_ms", ru.pauseRemainingMs}}},
                {"backpressure",
                 {{"limit", bs.limit},
                  {"circuit_state", circuitStateName(bs.state)},
                  {"outcome_window", bs.outcomeCount},
                  {"outcome_errors", bs.outcomeErrors},
                  {"mean_latency_ms", bs.meanLatencyMs}}},
                {"budget",
                 {{"denials", m.budgetDenials},
                  {"warnings", m.budgetWarnings},
                  {"pool_remaining", budget_->poolRemaining()},
                  {"agents", budget_->agentCount()}}},
                {"tokens", {{"input", m.tokensIn}, {"output", m.tokensOut}}},
                {"upstream_latency", lat},
                {"provider", cfg_.profile.name}};
    }

private:
    // Shared state between the handler thread (which owns the client
    // connection) and the per-request worker (which owns the upstream
    // exchange and the retry loop).
    struct Exchange {
        std::mutex mu;
        std::condition_variable cv;
        bool decided = false;
        bool streaming = false;
        int status = 0;
        std::string contentType = "application/json";
        std::vector<std::pair<std::string, std::string>> headers;
        std::string body;
        std::deque<std::string> chunks;
        bool streamDone = false;
        bool streamFailed = false;
        std::atomic<bool> clientGone{false};
    };

    void parseUpstream() {
        std::smatch m;
        std::regex re(R"(^https?://([^/:]+)(?::(\d+))?(/.*)?$)");
        if (std::regex_match(cfg_.upstreamBase, m, re)) {
            upstreamHost_ = m[1];
            upstreamPort_ = m[2].matched ? std::stoi(m[2]) : 80;
        } else {
            upstreamHost_ = "127.0.0.1";
            upstreamPort_ = 80;
        }
    }

    void installCheckpointWriter();

    void recordStatus(int code) {
        std::lock_guard<std::mutex> lock(statusMu_);
        ++statusCounts_[code];
    }

    void recordLatency(double ms) {
        std::lock_guard<std::mutex> lock(latMu_);
        latencies_.push_back(ms);
        while (latencies_.size() > 2048)
            latencies_.pop_front();
    }

    static void jsonError(httplib::Response& res, int status, const std::string& type,
                          const std::string& message) {
        nlohmann::json body = {{"error", {{"type", type}, {"message", message}}}};
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    // Headers forwarded from the agent to the upstream.
    static httplib::Headers filterRequestHeaders(const httplib::Request& req) {
        httplib::Headers out;
        for (const auto& [name, value] : req.headers) {
            if (isHopByHopHeader(name) || isManagedHeader(name))
                continue;
            std::string lower;
            for (char c : name)
                lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            if (lower.rfind("x-hivemind-", 0) == 0)
                continue; // scheduling metadata stays on this side
            if (lower == "remote_addr" || lower == "remote_port" || lower == "local_addr" ||
                lower == "local_port")
                continue; // httplib bookkeeping pseudo-headers
            out.emplace(name, value);
        }
        return out;
    }

    void handleProxy(const httplib::Request& creq, httplib::Response& cres) {
        received_.fetch_add(1);
        const std::string agentId = deriveAgentId(creq);
        const long estTokens = estimateTokensFromChars(creq.body.size());
        const int64_t arrivalMs = steadyNowMs();

        // 1. Circuit breaker.
        bool isProbe = false;
        if (cfg_.enableBackpressure) {
            auto gate = bp_->checkCircuit(arrivalMs);
            if (gate.action == BackpressureController::Gate::Action::FastFail) {
                circuitFastFails_.fetch_add(1);
                recordStatus(503);
                jsonError(cres, 503, "hivemind_circuit_open",
                          "upstream circuit is open; request failed fast");
                cres.set_header("retry-after",
                                std::to_string((gate.retryAfterMs + 999) / 1000));
                return;
            }
            isProbe = gate.action == BackpressureController::Gate::Action::Probe;
        }

        // 2. Budget.
        if (cfg_.enableBudget) {
            auto d = budget_->admit(agentId, estTokens, creq.path);
            if (d.verdict == BudgetManager::Verdict::Deny) {
                if (isProbe)
                    bp_->onProbeAbandoned(steadyNowMs());
                budgetDenials_.fetch_add(1);
                recordStatus(429);
                jsonError(cres, 429, "hivemind_budget_exhausted",
                          d.poolExhausted
                              ? "shared token pool exhausted"
                              : "agent token budget exhausted; checkpoint written");
                cres.set_header("x-hivemind-budget-used", std::to_string(d.used));
                cres.set_header("x-hivemind-budget-ceiling", std::to_string(d.ceiling));
                return;
            }
            if (d.verdict == BudgetManager::Verdict::Warn) {
                budgetWarnings_.fetch_add(1);
                cres.set_header("x-hivemind-budget-warning",
                                std::to_string(d.percentUsed) + "% of token budget used");
            }
        }

        // 3. Admission.
        std::optional<SlotGuard> slot;
        if (cfg_.enableAdmission) {
            slot = gate_->acquire();
            if (!slot) {
                if (isProbe)
                    bp_->onProbeAbandoned(steadyNowMs());
                recordStatus(503);
                jsonError(cres, 503, "hivemind_shutdown", "proxy is shutting down");
                return;
            }
        }

        // 4+5. Rate gate and upstream exchange run on a worker so streamed
        // responses can flow while this thread feeds the client connection.
        auto ex = std::make_shared<Exchange>();
        workers_.fetch_add(1);
        std::thread([this, ex, creq, agentId, estTokens, isProbe,
                     slotHolder = std::make_shared<std::optional<SlotGuard>>(std::move(slot))]() mutable {
            runExchange(*ex, creq, agentId, estTokens, isProbe);
            slotHolder->reset(); // slot released only after the final attempt
            workers_.fetch_sub(1);
            ex->cv.notify_all();
        }).detach();

        std::unique_lock<std::mutex> lock(ex->mu);
        ex->cv.wait(lock, [&] { return ex->decided; });

        for (const auto& [name, value] : ex->headers)
            cres.set_header(name, value);

        if (!ex->streaming) {
            cres.status = ex->status;
            cres.set_content(ex->body, ex->contentType);
            return;
        }

        // Streamed response: hand the channel to a chunked provider. The
        // worker keeps filling chunks; a failure without streamDone turns
        // into a dropped connection, which is how truncation must look.
        streams_.fetch_add(1);
        cres.status = ex->status;
        lock.unlock();
        cres.set_chunked_content_provider(
            ex->contentType,
            [ex](size_t, httplib::DataSink& sink) {
                std::unique_lock<std::mutex> l(ex->mu);
                ex->cv.wait(l, [&] {
                    return !ex->chunks.empty() || ex->streamDone || ex->streamFailed;
                });
                while (!ex->chunks.empty()) {
                    std::string chunk = std::move(ex->chunks.front());
                    ex->chunks.pop_front();
                    l.unlock();
                    if (!sink.write(chunk.data(), chunk.size())) {
                        ex->clientGone.store(true);
                        return false;
                    }
                    l.lock();
                }
                if (ex->streamFailed)
                    return false; // abort: client sees a truncated stream
                if (ex->streamDone) {
                    l.unlock();
                    sink.done();
                }
                return true;
            },
            [ex](bool success) {
                if (!success)
                    ex->clientGone.store(true);
            });
    }

    // The full upstream exchange for one client request: rate gating, the
    // retry loop, backpressure feedback, usage accounting, and the final
    // verdict pushed into the exchange.
    void runExchange(Exchange& ex, const httplib::Request& creq, const std::string& agentId,
                     long estTokens, bool isProbe) {
        const int maxAttempts = cfg_.enableRetry ? cfg_.retry.maxAttempts : 1;
        AttemptOutcome last;
        httplib::Headers lastHeaders;
        std::string lastBody;
        int lastStatus = 0;
        int attempts = 0;
        bool probePending = isProbe && cfg_.enableBackpressure;

        for (int attempt = 0; attempt < maxAttempts; ++attempt) {
            // Every attempt re-passes the rate gate; a retry must not bypass
            // pacing that arrivals are subject to.
            if (cfg_.enableRateLimit) {
                auto admit = rate_->waitAndRecord(estTokens);
                if (admit == RateGate::Admit::InfeasibleWeight) {
                    if (probePending)
                        bp_->onProbeAbandoned(steadyNowMs());
                    decideError(ex, 400, "hivemind_request_too_large",
                                "request token estimate exceeds the per-window token limit");
                    return;
                }
                if (admit == RateGate::Admit::Shutdown) {
                    if (probePending)
                        bp_->onProbeAbandoned(steadyNowMs());
                    decideError(ex, 503, "hivemind_shutdown", "proxy is shutting down");
                    return;
                }
            }

            attempts = attempt + 1;
            AttemptResult r = performAttempt(ex, creq, attempts);
            last = r.outcome;
            lastStatus = r.outcome.status;
            lastHeaders = std::move(r.headers);
            lastBody = std::move(r.body);

            Classification cls = classify(last);
            const int64_t now = steadyNowMs();

            // Backpressure feedback. The probe's first attempt decides the
            // circuit transition; afterwards it is an ordinary request.
            if (cfg_.enableBackpressure) {
                bool healthy = cls == Classification::Success ||
                               (last.transport == TransportError::None && lastStatus < 500 &&
                                lastStatus != 429);
                if (probePending) {
                    bp_->onProbeResult(now, healthy, r.latencyMs);
                    probePending = false;
                } else if (healthy) {
                    bp_->onSuccess(now, r.latencyMs);
                } else {
                    bp_->onFailure(now);
                }
            } else {
                probePending = false;
            }

            if (cls == Classification::Success) {
                if (cfg_.enableRateLimit)
                    rate_->observeHeaders(parseRateHeaders(lastHeaders));
                finishSuccess(ex, creq, agentId, r, lastHeaders, lastBody, attempts);
                return;
            }

            if (r.streamStarted) {
                // Bytes already reached the client: surface the truncation.
                upstreamErrors_.fetch_add(1);
                std::lock_guard<std::mutex> lock(ex.mu);
                ex.streamFailed = true;
                ex.cv.notify_all();
                return;
            }

            if (cls == Classification::Retryable && attempt + 1 < maxAttempts &&
                !ex.clientGone.load()) {
                retries_.fetch_add(1);
                int64_t delay;
                {
                    std::lock_guard<std::mutex> lock(rngMu_);
                    delay = retryDelayMs(cfg_.retry, attempt, last.retryAfterMs, rng_);
                }
                interruptibleSleep(delay);
                if (!stopping_.load())
                    continue;
            }
            break;
        }

        // Fatal answer, exhausted retries, or shutdown: forward what we have.
        if (last.transport != TransportError::None || lastStatus == 0) {
            upstreamErrors_.fetch_add(1);
            recordStatus(502);
            nlohmann::json body = {
                {"error",
                 {{"type", "hivemind_upstream_unreachable"},
                  {"message", last.transport == TransportError::ConnectionReset
                                  ? "connection reset by upstream"
                                  : "upstream disconnected mid-exchange"},
                  {"attempts", attempts}}}};
            std::lock_guard<std::mutex> lock(ex.mu);
            ex.status = 502;
            ex.contentType = "application/json";
            ex.body = body.dump();
            ex.headers.emplace_back("x-hivemind-attempts", std::to_string(attempts));
            ex.decided = true;
            ex.cv.notify_all();
            return;
        }

        recordStatus(lastStatus);
        std::lock_guard<std::mutex> lock(ex.mu);
        ex.status = lastStatus;
        ex.contentType = headerOr(lastHeaders, "content-type", "application/json");
        ex.body = lastBody;
        copyResponseHeaders(lastHeaders, ex.headers);
        ex.headers.emplace_back("x-hivemind-attempts", std::to_string(attempts));
        ex.decided = true;
        ex.cv.notify_all();
    }

    struct AttemptResult {
        AttemptOutcome outcome;
        httplib::Headers headers;
        std::string body;
        double latencyMs = 0.0;
        bool streamStarted = false;
        TokenUsage streamUsage;
        size_t streamedBytes = 0;
    };

    // One upstream send. If the response turns out to be a 2xx SSE stream,
    // the exchange is decided mid-flight and bytes forward as they arrive;
    // otherwise the body is buffered and the decision happens afterwards.
    AttemptResult performAttempt(Exchange& ex, const httplib::Request& creq, int attemptNo) {
        AttemptResult r;
        httplib::Client cli(upstreamHost_, upstreamPort_);
        cli.set_connection_timeout(std::chrono::milliseconds(cfg_.upstreamTimeoutMs));
        cli.set_read_timeout(std::chrono::milliseconds(cfg_.upstreamTimeoutMs));
        cli.set_write_timeout(std::chrono::milliseconds(cfg_.upstreamTimeoutMs));

        httplib::Request ureq;
        ureq.method = creq.method;
        ureq.path = creq.target.empty() ? creq.path : creq.target;
        ureq.headers = filterRequestHeaders(creq);
        ureq.body = creq.body;

        const int64_t sentAt = steadyNowMs();
        int64_t firstByteAt = 0;
        auto scanner = std::make_shared<SseUsageScanner>();

        ureq.response_handler = [&](const httplib::Response& ur) {
            firstByteAt = steadyNowMs();
            r.outcome.status = ur.status;
            r.headers = ur.headers;
            if (ur.status >= 200 && ur.status < 300 &&
                isSseContentType(headerOr(ur.headers, "content-type", ""))) {
                r.streamStarted = true;
                std::lock_guard<std::mutex> lock(ex.mu);
                ex.streaming = true;
                ex.status = ur.status;
                ex.contentType = headerOr(ur.headers, "content-type", "text/event-stream");
                copyResponseHeaders(ur.headers, ex.headers);
                ex.headers.emplace_back("x-hivemind-attempts", std::to_string(attemptNo));
                ex.decided = true;
                ex.cv.notify_all();
            }
            return true;
        };
        ureq.content_receiver = [&](const char* data, size_t len, uint64_t, uint64_t) {
            if (!r.streamStarted) {
                r.body.append(data, len);
                return true;
            }
            scanner->feed(data, len);
            r.streamedBytes += len;
            {
                std::lock_guard<std::mutex> lock(ex.mu);
                ex.chunks.emplace_back(data, len);
                ex.cv.notify_all();
            }
            return !ex.clientGone.load();
        };

        auto result = cli.send(ureq);
        const int64_t doneAt = steadyNowMs();
        r.latencyMs = static_cast<double>(
            r.streamStarted ? (firstByteAt > 0 ? firstByteAt - sentAt : doneAt - sentAt)
                            : doneAt - sentAt);

        if (result.error() != httplib::Error::Success) {
            // Headers may have arrived before the failure; classify by wire
            // behavior, not by the partial response.
            r.outcome.status = 0;
            switch (result.error()) {
            case httplib::Error::Connection:
            case httplib::Error::ConnectionTimeout:
                r.outcome.transport = TransportError::ConnectionReset;
                break;
            case httplib::Error::Canceled:
                // Receiver returned false: the client went away.
                r.outcome.transport = TransportError::ServerDisconnected;
                break;
            default:
                r.outcome.transport = TransportError::ServerDisconnected;
                break;
            }
            return r;
        }

        r.outcome.status = result->status;
        r.headers = result->headers;
        if (auto ra = headerOptional(r.headers, "retry-after")) {
            try {
                r.outcome.retryAfterMs = static_cast<int64_t>(std::stod(*ra) * 1000.0);
            } catch (...) {
            }
        }
        if (r.streamStarted)
            r.streamUsage = scanner->finish();
        return r;
    }

    void finishSuccess(Exchange& ex, const httplib::Request& creq, const std::string& agentId,
                       AttemptResult& r, const httplib::Headers& headers,
                       const std::string& body, int attempts) {
        proxied_.fetch_add(1);
        recordStatus(r.outcome.status);
        recordLatency(r.latencyMs);

        TokenUsage usage;
        if (r.streamStarted) {
            usage = r.streamUsage.fromProvider
                        ? r.streamUsage
                        : heuristicUsage(creq.body.size(), r.streamedBytes);
        } else if (auto u = extractUsageFromBody(body)) {
            usage = *u;
        } else {
            usage = heuristicUsage(creq.body.size(), body.size());
        }
        tokensIn_.fetch_add(usage.inputTokens);
        tokensOut_.fetch_add(usage.outputTokens);
        if (cfg_.enableBudget)
            budget_->recordUsage(agentId, usage.total());

        if (r.streamStarted) {
            std::lock_guard<std::mutex> lock(ex.mu);
            ex.streamDone = true;
            ex.cv.notify_all();
            return;
        }

        std::lock_guard<std::mutex> lock(ex.mu);
        ex.status = r.outcome.status;
        ex.contentType = headerOr(headers, "content-type", "application/json");
        ex.body = body;
        copyResponseHeaders(headers, ex.headers);
        ex.headers.emplace_back("x-hivemind-attempts", std::to_string(attempts));
        ex.decided = true;
        ex.cv.notify_all();
    }

    void decideError(Exchange& ex, int status, const std::string& type,
                     const std::string& message) {
        recordStatus(status);
        nlohmann::json body = {{"error", {{"type", type}, {"message", message}}}};
        std::lock_guard<std::mutex> lock(ex.mu);
        ex.status = status;
        ex.contentType = "application/json";
        ex.body = body.dump();
        ex.decided = true;
        ex.cv.notify_all();
    }

    static std::string headerOr(const httplib::Headers& headers, const char* name,
                                const std::string& fallback) {
        auto it = headers.find(name);
        return it == headers.end() ? fallback : it->second;
    }

    static std::optional<std::string> headerOptional(const httplib::Headers& headers,
                                                     const char* name) {
        auto it = headers.find(name);
        if (it == headers.end())
            return std::nullopt;
        return it->second;
    }

    // Response headers forwarded to the client; the content type and length
    // travel via the response body call instead.
    static void copyResponseHeaders(const httplib::Headers& from,
                                    std::vector<std::pair<std::string, std::string>>& to) {
        for (const auto& [name, value] : from) {
            if (isHopByHopHeader(name))
                continue;
            std::string lower;
            for (char c : name)
                lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            if (lower == "content-length" || lower == "content-type")
                continue;
            to.emplace_back(name, value);
        }
    }

    void interruptibleSleep(int64_t ms) {
        int64_t deadline = steadyNowMs() + ms;
        while (!stopping_.load()) {
            int64_t remain = deadline - steadyNowMs();
            if (remain <= 0)
                return;
            std::this_thread::sleep_for(
                std::chrono::milliseconds(std::min<int64_t>(remain, 50)));
        }
    }

    ProxyConfig cfg_;
    std::string upstreamHost_;
    int upstreamPort_ = 80;
    int port_ = 0;

    std::unique_ptr<httplib::Server> server_;
    std::thread serverThread_;
    std::atomic<bool> stopping_{false};
    std::atomic<int> workers_{0};

    std::unique_ptr<AdmissionGate> gate_;
    std::unique_ptr<RateGate> rate_;
    std::unique_ptr<BackpressureController> bp_;
    std::unique_ptr<BudgetManager> budget_;

    std::mutex rngMu_;
    std::mt19937_64 rng_;

    std::atomic<uint64_t> received_{0}, proxied_{0}, retries_{0}, circuitFastFails_{0},
        budgetDenials_{0}, budgetWarnings_{0}, streams_{0}, upstreamErrors_{0};
    std::atomic<long> tokensIn_{0}, tokensOut_{0};

    mutable std::mutex statusMu_;
    std::map<int, uint64_t> statusCounts_;

    mutable std::mutex latMu_;
    std::deque<double> latencies_;
};

// Checkpoint files: one JSON document per killed agent, named by agent id.
inline void HivemindProxy::installCheckpointWriter() {
    std::string dir = cfg_.checkpointDir;
    budget_->onCheckpoint([dir](const std::string& agentId, const nlohmann::json& doc) {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        std::string safe;
        for (char c : agentId)
            safe.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
        std::ofstream out(dir + "/" + safe + ".json");
        if (out)
            out << doc.dump(2) << "\n";
    });
}

} // namespace hivemind
