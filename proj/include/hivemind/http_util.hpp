#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>

#include <httplib.h>

#include <hivemind/ratelimit.hpp>

namespace hivemind {

// Hop-by-hop headers live on one TCP leg and must not be forwarded.
inline bool isHopByHopHeader(const std::string& name) {
    static const char* const kHeaders[] = {
        "connection", "keep-alive",        "proxy-authenticate", "proxy-authorization",
        "te",         "transfer-encoding", "trailer",            "upgrade",
    };
    std::string lower;
    lower.reserve(name.size());
    for (char c : name)
        lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    for (const char* h : kHeaders)
        if (lower == h)
            return true;
    return false;
}

// Headers the HTTP stack regenerates itself on each leg.
inline bool isManagedHeader(const std::string& name) {
    std::string lower;
    lower.reserve(name.size());
    for (char c : name)
        lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return lower == "host" || lower == "content-length" || lower == "accept-encoding";
}

inline bool isSseContentType(const std::string& contentType) {
    return contentType.rfind("text/event-stream", 0) == 0;
}

// FNV-1a, for stable anonymous agent identities.
inline uint64_t fnv1a64(const std::string& data) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Agent identity: the explicit x-hivemind-agent-id header when present,
// otherwise a stable hash of the peer address plus credential material.
// Same-host agents sharing one API key therefore collapse into a single
// anonymous identity; the header is the reliable opt-in.
inline std::string deriveAgentId(const httplib::Request& req) {
    if (req.has_header("x-hivemind-agent-id"))
        return req.get_header_value("x-hivemind-agent-id");
    std::string material = req.remote_addr;
    for (const char* h : {"x-api-key", "authorization", "api-key", "x-goog-api-key"}) {
        if (req.has_header(h)) {
            material += '|';
            material += req.get_header_value(h);
        }
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "anon-%016llx",
                  static_cast<unsigned long long>(fnv1a64(material)));
    return buf;
}

// Provider rate-limit headers, both naming families:
//   anthropic-ratelimit-requests-remaining / -limit / -reset
//   x-ratelimit-remaining-requests / -limit-requests / -reset-requests
// Reset values are parsed as durations ("1s", "6m0s", "250ms").
inline RateHeaderInfo parseRateHeaders(const httplib::Headers& headers) {
    auto get = [&](const char* name) -> std::optional<std::string> {
        auto it = headers.find(name);
        if (it == headers.end())
            return std::nullopt;
        return it->second;
    };
    auto getLong = [&](const char* a, const char* b) -> std::optional<long> {
        for (const char* name : {a, b}) {
            auto v = get(name);
            if (!v)
                continue;
            try {
                return std::stol(*v);
            } catch (...) {
            }
        }
        return std::nullopt;
    };
    auto getReset = [&](const char* a, const char* b) -> std::optional<int64_t> {
        for (const char* name : {a, b}) {
            auto v = get(name);
            if (v)
                if (auto ms = parseResetDurationMs(*v))
                    return ms;
        }
        return std::nullopt;
    };

    RateHeaderInfo info;
    info.limitRequests =
        getLong("anthropic-ratelimit-requests-limit", "x-ratelimit-limit-requests");
    info.remainingRequests =
        getLong("anthropic-ratelimit-requests-remaining", "x-ratelimit-remaining-requests");
    info.resetRequestsMs =
        getReset("anthropic-ratelimit-requests-reset", "x-ratelimit-reset-requests");
    info.limitTokens = getLong("anthropic-ratelimit-tokens-limit", "x-ratelimit-limit-tokens");
    info.remainingTokens =
        getLong("anthropic-ratelimit-tokens-remaining", "x-ratelimit-remaining-tokens");
    info.resetTokensMs = getReset("anthropic-ratelimit-tokens-reset", "x-ratelimit-reset-tokens");
    return info;
}

} // namespace hivemind
