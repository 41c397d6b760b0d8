#pragma once

#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>

namespace hivemind {

// Per-provider scheduling defaults: rate ceilings, concurrency cap, latency
// target, AIMD gains, plus how to recognize the provider and which request
// header carries its credential.
struct ProviderProfile {
    std::string name = "generic";
    long rpm = 60;
    long tpm = 100000;
    double maxConcurrency = 5.0;
    double latencyTargetMs = 2000;
    double alpha = 0.5;
    double beta = 0.5;
    std::string authHeader = "authorization";
    std::string detectPattern; // ECMAScript regex, matched case-insensitively

    bool operator==(const ProviderProfile&) const = default;
};

inline void to_json(nlohmann::json& j, const ProviderProfile& p) {
    j = {{"name", p.name},
         {"rpm", p.rpm},
         {"tpm", p.tpm},
         {"max_concurrency", p.maxConcurrency},
         {"latency_target_ms", p.latencyTargetMs},
         {"alpha", p.alpha},
         {"beta", p.beta},
         {"auth_header", p.authHeader},
         {"detect_pattern", p.detectPattern}};
}

inline void from_json(const nlohmann::json& j, ProviderProfile& p) {
    j.at("name").get_to(p.name);
    j.at("rpm").get_to(p.rpm);
    j.at("tpm").get_to(p.tpm);
    j.at("max_concurrency").get_to(p.maxConcurrency);
    j.at("latency_target_ms").get_to(p.latencyTargetMs);
    p.alpha = j.value("alpha", 0.5);
    p.beta = j.value("beta", 0.5);
    p.authHeader = j.value("auth_header", std::string("authorization"));
    p.detectPattern = j.value("detect_pattern", std::string());
}

// Built-in registry. Ollama runs locally: effectively unmetered, but a local
// model serves little parallelism, hence the tiny concurrency cap, the long
// latency target, and the gentler multiplicative decrease.
inline const std::vector<ProviderProfile>& builtinProviderProfiles() {
    static const std::vector<ProviderProfile> profiles = {
        {"anthropic", 50, 80000, 5.0, 3000, 0.5, 0.5, "x-api-key", R"(api\.anthropic\.com)"},
        {"openai", 60, 150000, 10.0, 2000, 0.5, 0.5, "authorization", R"(api\.openai\.com)"},
        {"azure_openai", 60, 120000, 10.0, 3000, 0.5, 0.5, "api-key", R"(\.openai\.azure\.com)"},
        {"google_ai", 60, 100000, 8.0, 2000, 0.5, 0.5, "x-goog-api-key",
         R"(generativelanguage\.googleapis\.com)"},
        {"ollama", 1000, 10000000, 2.0, 10000, 0.5, 0.7, "authorization",
         R"((:11434)|(ollama))"},
        {"generic", 60, 100000, 5.0, 2000, 0.5, 0.5, "authorization", ""},
    };
    return profiles;
}

inline std::optional<ProviderProfile> providerProfileByName(const std::string& name) {
    for (const auto& p : builtinProviderProfiles())
        if (p.name == name)
            return p;
    return std::nullopt;
}

// First profile whose pattern matches the upstream URL; the pattern-less
// generic profile is the fallback.
inline ProviderProfile detectProvider(const std::string& upstreamUrl) {
    for (const auto& p : builtinProviderProfiles()) {
        if (p.detectPattern.empty())
            continue;
        std::regex re(p.detectPattern, std::regex::ECMAScript | std::regex::icase);
        if (std::regex_search(upstreamUrl, re))
            return p;
    }
    return *providerProfileByName("generic");
}

} // namespace hivemind
