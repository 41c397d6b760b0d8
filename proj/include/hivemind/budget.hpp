#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include <hivemind/clock.hpp>

namespace hivemind {

// ~4 characters per token; always rounds up so estimates err conservative.
inline long estimateTokensFromChars(size_t chars) {
    return static_cast<long>((chars + 3) / 4);
}

// ──────────────────────────────────────────────────────────────────────────────
// BudgetManager: per-agent token ceilings inside a shared global pool.
//
// Thresholds use integer arithmetic so boundary behavior is exact:
//     warn   when 100 * used >= 85 * ceiling
//     kill   when        used >=      ceiling   (or the global pool is empty)
// The first kill for an agent emits a checkpoint document through the
// configured sink so the orchestrator can resume the agent later with its
// spend history intact.
// ──────────────────────────────────────────────────────────────────────────────
class BudgetManager {
public:
    enum class Verdict { Ok, Warn, Deny };

    struct Decision {
        Verdict verdict = Verdict::Ok;
        long used = 0;
        long ceiling = 0;
        int percentUsed = 0;
        bool poolExhausted = false;
    };

    struct AgentInfo {
        long used = 0;
        long ceiling = 0;
        bool killed = false;
        long requests = 0;
        std::string lastRequestPath;
        long lastEstTokens = 0;
    };

    using CheckpointSink = std::function<void(const std::string& agentId, const nlohmann::json&)>;

    BudgetManager(long poolTotal, size_t maxAgents)
        : poolTotal_(poolTotal), poolRemaining_(poolTotal),
          defaultCeiling_(maxAgents > 0 ? poolTotal / static_cast<long>(maxAgents) : poolTotal) {}

    void onCheckpoint(CheckpointSink sink) {
        std::lock_guard<std::mutex> lock(mu_);
        sink_ = std::move(sink);
    }

    void setCeiling(const std::string& agentId, long ceiling) {
        std::lock_guard<std::mutex> lock(mu_);
        agentLocked(agentId).ceiling = ceiling;
    }

    // Pre-flight check for one request. Denial is sticky per agent: an agent
    // at or over its ceiling stays killed until the budget is raised.
    Decision admit(const std::string& agentId, long estTokens, const std::string& path = "") {
        std::unique_lock<std::mutex> lock(mu_);
        AgentInfo& a = agentLocked(agentId);
        a.lastRequestPath = path;
        a.lastEstTokens = estTokens;

        Decision d;
        d.used = a.used;
        d.ceiling = a.ceiling;
        d.percentUsed =
            a.ceiling > 0 ? static_cast<int>((a.used * 100) / a.ceiling) : 0;
        d.poolExhausted = poolRemaining_ <= 0;

        if (a.used >= a.ceiling || d.poolExhausted) {
            d.verdict = Verdict::Deny;
            if (!a.killed) {
                a.killed = true;
                emitCheckpointLocked(agentId, a, std::move(lock));
            }
            return d;
        }
        if (a.used * 100 >= a.ceiling * 85)
            d.verdict = Verdict::Warn;
        return d;
    }

    // Actual spend, recorded after the response (provider-reported usage when
    // available, the character heuristic otherwise).
    void recordUsage(const std::string& agentId, long tokens) {
        std::lock_guard<std::mutex> lock(mu_);
        AgentInfo& a = agentLocked(agentId);
        a.used += tokens;
        a.requests += 1;
        poolRemaining_ -= tokens;
    }

    // Raising a ceiling revives a killed agent.
    void raiseCeiling(const std::string& agentId, long newCeiling) {
        std::lock_guard<std::mutex> lock(mu_);
        AgentInfo& a = agentLocked(agentId);
        a.ceiling = newCeiling;
        if (a.used < a.ceiling)
            a.killed = false;
    }

    std::optional<AgentInfo> agent(const std::string& agentId) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = agents_.find(agentId);
        if (it == agents_.end())
            return std::nullopt;
        return it->second;
    }

    long poolRemaining() const {
        std::lock_guard<std::mutex> lock(mu_);
        return poolRemaining_;
    }

    long poolTotal() const { return poolTotal_; }
    long defaultCeiling() const { return defaultCeiling_; }

    size_t agentCount() const {
        std::lock_guard<std::mutex> lock(mu_);
        return agents_.size();
    }

    nlohmann::json summary() const {
        std::lock_guard<std::mutex> lock(mu_);
        nlohmann::json agents = nlohmann::json::object();
        for (const auto& [id, a] : agents_) {
            agents[id] = {{"used", a.used},
                          {"ceiling", a.ceiling},
                          {"killed", a.killed},
                          {"requests", a.requests}};
        }
        return {{"pool_total", poolTotal_},
                {"pool_remaining", poolRemaining_},
                {"default_ceiling", defaultCeiling_},
                {"agents", agents}};
    }

private:
    AgentInfo& agentLocked(const std::string& agentId) {
        auto [it, inserted] = agents_.try_emplace(agentId);
        if (inserted)
            it->second.ceiling = defaultCeiling_;
        return it->second;
    }

    // Checkpoint payload carries everything needed to resume the agent.
    void emitCheckpointLocked(const std::string& agentId, const AgentInfo& a,
                              std::unique_lock<std::mutex> lock) {
        if (!sink_)
            return;
        nlohmann::json doc = {{"agent_id", agentId},
                              {"tokens_used", a.used},
                              {"ceiling", a.ceiling},
                              {"requests", a.requests},
                              {"pool_remaining", poolRemaining_},
                              {"timestamp_ms", wallNowMs()},
                              {"last_request",
                               {{"path", a.lastRequestPath}, {"est_tokens", a.lastEstTokens}}}};
        auto sink = sink_;
        lock.unlock();
        sink(agentId, doc);
    }

    mutable std::mutex mu_;
    long poolTotal_;
    long poolRemaining_;
    long defaultCeiling_;
    std::map<std::string, AgentInfo> agents_;
    CheckpointSink sink_;
};

} // namespace hivemind
