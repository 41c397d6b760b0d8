#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include <hivemind/budget.hpp>

namespace hivemind {

// Token usage attributed to one exchange. fromProvider distinguishes real
// provider accounting from the character heuristic.
struct TokenUsage {
    long inputTokens = 0;
    long outputTokens = 0;
    bool fromProvider = false;

    long total() const { return inputTokens + outputTokens; }
};

// Reads usage out of a non-streaming completion body. Understands both common
// shapes:
//   {"usage": {"input_tokens": N, "output_tokens": M}}        (messages API)
//   {"usage": {"prompt_tokens": N, "completion_tokens": M}}   (chat API)
inline std::optional<TokenUsage> extractUsageFromBody(const std::string& body) {
    auto parsed = nlohmann::json::parse(body, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object())
        return std::nullopt;
    auto it = parsed.find("usage");
    if (it == parsed.end() || !it->is_object())
        return std::nullopt;
    const auto& u = *it;
    TokenUsage usage;
    usage.fromProvider = true;
    if (u.contains("input_tokens"))
        usage.inputTokens = u.value("input_tokens", 0L);
    else if (u.contains("prompt_tokens"))
        usage.inputTokens = u.value("prompt_tokens", 0L);
    else
        return std::nullopt;
    if (u.contains("output_tokens"))
        usage.outputTokens = u.value("output_tokens", 0L);
    else if (u.contains("completion_tokens"))
        usage.outputTokens = u.value("completion_tokens", 0L);
    return usage;
}

// ──────────────────────────────────────────────────────────────────────────────
// SseUsageScanner: incremental usage extraction from a server-sent event
// stream, fed chunk by chunk as bytes pass through the proxy.
//
// Messages-API streams report input tokens in the message_start event and a
// cumulative output total in message_delta events (the last one wins). Chat
// streams that include usage put it in a terminal chunk's "usage" object.
// The scanner buffers only the current unterminated event, so arbitrary chunk
// boundaries (mid-line, mid-UTF-8) are fine.
// ──────────────────────────────────────────────────────────────────────────────
class SseUsageScanner {
public:
    void feed(const char* data, size_t len) {
        buffer_.append(data, len);
        size_t pos;
        while ((pos = findEventEnd()) != std::string::npos) {
            processEvent(buffer_.substr(0, pos));
            buffer_.erase(0, pos + delimLen_);
        }
    }

    void feed(const std::string& chunk) { feed(chunk.data(), chunk.size()); }

    // Flushes a final unterminated event (streams truncated mid-way).
    TokenUsage finish() {
        if (!buffer_.empty()) {
            processEvent(buffer_);
            buffer_.clear();
        }
        return usage();
    }

    TokenUsage usage() const {
        TokenUsage u;
        u.inputTokens = inputTokens_;
        u.outputTokens = outputTokens_;
        u.fromProvider = sawProviderUsage_;
        return u;
    }

private:
    size_t findEventEnd() {
        size_t lf = buffer_.find("\n\n");
        size_t crlf = buffer_.find("\r\n\r\n");
        if (lf == std::string::npos && crlf == std::string::npos)
            return std::string::npos;
        if (crlf != std::string::npos && (lf == std::string::npos || crlf < lf)) {
            delimLen_ = 4;
            return crlf;
        }
        delimLen_ = 2;
        return lf;
    }

    void processEvent(const std::string& event) {
        // Concatenate the data: lines of the event per the SSE grammar.
        std::string payload;
        size_t start = 0;
        while (start <= event.size()) {
            size_t end = event.find('\n', start);
            std::string line = event.substr(
                start, end == std::string::npos ? std::string::npos : end - start);
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (line.rfind("data:", 0) == 0) {
                std::string value = line.substr(5);
                if (!value.empty() && value.front() == ' ')
                    value.erase(0, 1);
                if (!payload.empty())
                    payload += '\n';
                payload += value;
            }
            if (end == std::string::npos)
                break;
            start = end + 1;
        }
        if (payload.empty() || payload == "[DONE]")
            return;
        auto parsed = nlohmann::json::parse(payload, nullptr, false);
        if (parsed.is_discarded() || !parsed.is_object())
            return;

        std::string type = parsed.value("type", std::string());
        if (type == "message_start") {
            const auto& usage = parsed["message"]["usage"];
            if (usage.is_object()) {
                inputTokens_ = usage.value("input_tokens", 0L);
                outputTokens_ = std::max(outputTokens_, usage.value("output_tokens", 0L));
                sawProviderUsage_ = true;
            }
        } else if (type == "message_delta") {
            auto it = parsed.find("usage");
            if (it != parsed.end() && it->is_object()) {
                // Cumulative total: later deltas supersede earlier ones.
                outputTokens_ = std::max(outputTokens_, it->value("output_tokens", 0L));
                sawProviderUsage_ = true;
            }
        } else {
            auto it = parsed.find("usage");
            if (it != parsed.end() && it->is_object()) {
                if (it->contains("prompt_tokens"))
                    inputTokens_ = it->value("prompt_tokens", 0L);
                if (it->contains("completion_tokens"))
                    outputTokens_ = std::max(outputTokens_, it->value("completion_tokens", 0L));
                sawProviderUsage_ = true;
            }
        }
    }

    std::string buffer_;
    size_t delimLen_ = 2;
    long inputTokens_ = 0;
    long outputTokens_ = 0;
    bool sawProviderUsage_ = false;
};

// Fallback accounting when a response carries no usage at all: the same
// 4-characters-per-token heuristic used for request estimates.
inline TokenUsage heuristicUsage(size_t requestChars, size_t responseChars) {
    TokenUsage u;
    u.inputTokens = estimateTokensFromChars(requestChars);
    u.outputTokens = estimateTokensFromChars(responseChars);
    u.fromProvider = false;
    return u;
}

} // namespace hivemind
