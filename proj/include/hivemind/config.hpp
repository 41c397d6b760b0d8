#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include <hivemind/harness.hpp>
#include <hivemind/mock_upstream.hpp>
#include <hivemind/providers.hpp>
#include <hivemind/proxy.hpp>

namespace hivemind {

// ──────────────────────────────────────────────────────────────────────────────
// Runtime configuration: JSON round-trip for every tunable, plus validation
// with field-level messages.
//
// Precedence, lowest to highest: built-in defaults → provider profile
// (detected from the upstream URL or named explicitly) → config file →
// command-line flags. The merge happens in the CLI; this header provides the
// (de)serialization and the validators.
// ──────────────────────────────────────────────────────────────────────────────

inline void to_json(nlohmann::json& j, const ProxyConfig& c) {
    j = {{"listen_host", c.listenHost},
         {"listen_port", c.listenPort},
         {"upstream", c.upstreamBase},
         {"provider", c.profile},
         {"rpm", c.rpm},
         {"tpm", c.tpm},
         {"window_ms", c.windowMs},
         {"max_concurrency", c.maxConcurrency},
         {"latency_target_ms", c.latencyTargetMs},
         {"enable_admission", c.enableAdmission},
         {"enable_ratelimit", c.enableRateLimit},
         {"enable_backpressure", c.enableBackpressure},
         {"enable_retry", c.enableRetry},
         {"enable_budget", c.enableBudget},
         {"retry",
          {{"max_attempts", c.retry.maxAttempts},
           {"base_delay_ms", c.retry.baseDelayMs},
           {"max_delay_ms", c.retry.maxDelayMs}}},
         {"backpressure",
          {{"alpha", c.bp.alpha},
           {"beta", c.bp.beta},
           {"c_min", c.bp.cMin},
           {"latency_window", c.bp.latencyWindow},
           {"min_samples_per_update", c.bp.minSamplesPerUpdate},
           {"min_update_interval_ms", c.bp.minUpdateIntervalMs},
           {"err_window", c.bp.errWindow},
           {"err_threshold", c.bp.errThreshold},
           {"cooldown_ms", c.bp.cooldownMs}}},
         {"budget",
          {{"pool_tokens", c.budgetPoolTokens},
           {"max_agents", c.maxAgents},
           {"checkpoint_dir", c.checkpointDir}}},
         {"server_threads", c.serverThreads},
         {"upstream_timeout_ms", c.upstreamTimeoutMs},
         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ProxyConfig& c) {
    c.listenHost = j.value("listen_host", c.listenHost);
    c.listenPort = j.value("listen_port", c.listenPort);
    c.upstreamBase = j.value("upstream", c.upstreamBase);
    if (j.contains("provider"))
        j.at("provider").get_to(c.profile);
    c.rpm = j.value("rpm", c.rpm);
    c.tpm = j.value("tpm", c.tpm);
    c.windowMs = j.value("window_ms", c.windowMs);
    c.maxConcurrency = j.value("max_concurrency", c.maxConcurrency);
    c.latencyTargetMs = j.value("latency_target_ms", c.latencyTargetMs);
    c.enableAdmission = j.value("enable_admission", c.enableAdmission);
    c.enableRateLimit = j.value("enable_ratelimit", c.enableRateLimit);
    c.enableBackpressure = j.value("enable_backpressure", c.enableBackpressure);
    c.enableRetry = j.value("enable_retry", c.enableRetry);
    c.enableBudget = j.value("enable_budget", c.enableBudget);
    if (j.contains("retry")) {
        const auto& r = j.at("retry");
        c.retry.maxAttempts = r.value("max_attempts", c.retry.maxAttempts);
        c.retry.baseDelayMs = r.value("base_delay_ms", c.retry.baseDelayMs);
        c.retry.maxDelayMs = r.value("max_delay_ms", c.retry.maxDelayMs);
    }
    if (j.contains("backpressure")) {
        const auto& b = j.at("backpressure");
        c.bp.alpha = b.value("alpha", c.bp.alpha);
        c.bp.beta = b.value("beta", c.bp.beta);
        c.bp.cMin = b.value("c_min", c.bp.cMin);
        c.bp.latencyWindow = b.value("latency_window", c.bp.latencyWindow);
        c.bp.minSamplesPerUpdate =
            b.value("min_samples_per_update", c.bp.minSamplesPerUpdate);
        c.bp.minUpdateIntervalMs =
            b.value("min_update_interval_ms", c.bp.minUpdateIntervalMs);
        c.bp.errWindow = b.value("err_window", c.bp.errWindow);
        c.bp.errThreshold = b.value("err_threshold", c.bp.errThreshold);
        c.bp.cooldownMs = b.value("cooldown_ms", c.bp.cooldownMs);
    }
    if (j.contains("budget")) {
        const auto& b = j.at("budget");
        c.budgetPoolTokens = b.value("pool_tokens", c.budgetPoolTokens);
        c.maxAgents = b.value("max_agents", c.maxAgents);
        c.checkpointDir = b.value("checkpoint_dir", c.checkpointDir);
    }
    c.serverThreads = j.value("server_threads", c.serverThreads);
    c.upstreamTimeoutMs = j.value("upstream_timeout_ms", c.upstreamTimeoutMs);
    c.seed = j.value("seed", c.seed);
}

inline void to_json(nlohmann::json& j, const MockConfig& c) {
    j = {{"host", c.host},
         {"port", c.port},
         {"rpm", c.rpm},
         {"window_ms", c.windowMs},
         {"max_connections", c.maxConnections},
         {"p502", c.p502},
         {"p_reset", c.pReset},
         {"latency_base_ms", c.latencyBaseMs},
         {"latency_jitter_ms", c.latencyJitterMs},
         {"spike",
          {{"period_ms", c.spike.periodMs},
           {"magnitude_ms", c.spike.magnitudeMs},
           {"duration_ms", c.spike.durationMs}}},
         {"format", c.format},
         {"seed", c.seed},
         {"completion_chars", c.completionChars},
         {"stream_chunk_gap_ms", c.streamChunkGapMs},
         {"stream_content_chunks", c.streamContentChunks}};
}

inline void from_json(const nlohmann::json& j, MockConfig& c) {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.rpm = j.value("rpm", c.rpm);
    c.windowMs = j.value("window_ms", c.windowMs);
    c.maxConnections = j.value("max_connections", c.maxConnections);
    c.p502 = j.value("p502", c.p502);
    c.pReset = j.value("p_reset", c.pReset);
    c.latencyBaseMs = j.value("latency_base_ms", c.latencyBaseMs);
    c.latencyJitterMs = j.value("latency_jitter_ms", c.latencyJitterMs);
    if (j.contains("spike")) {
        const auto& s = j.at("spike");
        c.spike.periodMs = s.value("period_ms", c.spike.periodMs);
        c.spike.magnitudeMs = s.value("magnitude_ms", c.spike.magnitudeMs);
        c.spike.durationMs = s.value("duration_ms", c.spike.durationMs);
    }
    c.format = j.value("format", c.format);
    c.seed = j.value("seed", c.seed);
    c.completionChars = j.value("completion_chars", c.completionChars);
    c.streamChunkGapMs = j.value("stream_chunk_gap_ms", c.streamChunkGapMs);
    c.streamContentChunks = j.value("stream_content_chunks", c.streamContentChunks);
}

// Field-level validation; returns the offending field's message.
inline std::optional<std::string> validateProxyConfig(const ProxyConfig& c) {
    if (c.upstreamBase.empty())
        return "upstream: an upstream base URL is required";
    if (c.rpm <= 0)
        return "rpm: must be positive";
    if (c.tpm <= 0)
        return "tpm: must be positive";
    if (c.windowMs <= 0)
        return "window_ms: must be positive";
    if (c.maxConcurrency <= 0)
        return "max_concurrency: must be positive";
    if (c.listenPort < 0 || c.listenPort > 65535)
        return "listen_port: out of range";
    if (c.retry.maxAttempts < 1)
        return "retry.max_attempts: must be at least 1";
    if (c.retry.baseDelayMs < 0 || c.retry.maxDelayMs < c.retry.baseDelayMs)
        return "retry.max_delay_ms: must be >= retry.base_delay_ms >= 0";
    if (c.bp.alpha <= 0)
        return "backpressure.alpha: must be positive";
    if (c.bp.beta <= 0 || c.bp.beta >= 1)
        return "backpressure.beta: must be in (0, 1)";
    if (c.bp.errThreshold <= 0 || c.bp.errThreshold > 1)
        return "backpressure.err_threshold: must be in (0, 1]";
    if (c.bp.errWindow == 0)
        return "backpressure.err_window: must be positive";
    if (c.bp.cooldownMs < 0)
        return "backpressure.cooldown_ms: must be non-negative";
    if (c.budgetPoolTokens <= 0)
        return "budget.pool_tokens: must be positive";
    if (c.maxAgents == 0)
        return "budget.max_agents: must be positive";
    if (c.serverThreads < 1)
        return "server_threads: must be at least 1";
    return std::nullopt;
}

inline std::optional<std::string> validateMockConfig(const MockConfig& c) {
    if (c.rpm <= 0)
        return "rpm: must be positive";
    if (c.windowMs <= 0)
        return "window_ms: must be positive";
    if (c.maxConnections < 1)
        return "max_connections: must be at least 1";
    if (c.p502 < 0 || c.p502 > 1)
        return "p502: must be a probability in [0, 1]";
    if (c.pReset < 0 || c.pReset > 1)
        return "preset: must be a probability in [0, 1]";
    if (c.latencyBaseMs < 0 || c.latencyJitterMs < 0)
        return "latency: must be non-negative";
    if (c.port < 0 || c.port > 65535)
        return "port: out of range";
    if (c.format != "anthropic" && c.format != "openai")
        return "format: must be anthropic or openai";
    return std::nullopt;
}

// Applies a provider profile's scheduling defaults onto a proxy config.
// Explicit file/flag overrides are applied after this, so they win.
inline void applyProfile(ProxyConfig& c, const ProviderProfile& p) {
    c.profile = p;
    c.rpm = p.rpm;
    c.tpm = p.tpm;
    c.maxConcurrency = p.maxConcurrency;
    c.latencyTargetMs = p.latencyTargetMs;
    c.bp.alpha = p.alpha;
    c.bp.beta = p.beta;
}

inline nlohmann::json loadConfigFile(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("config: cannot open " + path);
    return nlohmann::json::parse(in);
}

} // namespace hivemind
