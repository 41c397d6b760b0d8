#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include <hivemind/clock.hpp>
#include <hivemind/mock_upstream.hpp>
#include <hivemind/proxy.hpp>
#include <hivemind/taskqueue.hpp>
#include <hivemind/tokens.hpp>

namespace hivemind {

// ──────────────────────────────────────────────────────────────────────────────
// Scenario harness: replays N concurrent agents against the mock upstream,
// either directly or through the proxy, and reports survival and token-waste
// statistics per repetition.
//
// An agent is a thread that performs `turns` sequential completions,
// optionally pausing (think time) between them. Any non-2xx response or
// transport failure kills the agent on the spot: tokens it consumed up to
// that point are counted as wasted, matching how a real multi-agent run
// loses the work of a crashed agent.
// ──────────────────────────────────────────────────────────────────────────────

enum class RunMode { Direct, Proxied };

inline const char* runModeName(RunMode m) {
    return m == RunMode::Direct ? "direct" : "proxied";
}

// Which scheduling primitives to disable for an ablation run.
struct AblationSet {
    bool admission = false;
    bool ratelimit = false;
    bool backpressure = false;
    bool retry = false;

    static std::optional<AblationSet> byName(const std::string& name) {
        AblationSet s;
        if (name == "full")
            return s;
        if (name == "no_admission") {
            s.admission = true;
            return s;
        }
        if (name == "no_ratelimit") {
            s.ratelimit = true;
            return s;
        }
        if (name == "no_backpressure") {
            s.backpressure = true;
            return s;
        }
        if (name == "no_retry") {
            s.retry = true;
            return s;
        }
        if (name == "admission_only") {
            s.ratelimit = s.backpressure = s.retry = true;
            return s;
        }
        return std::nullopt;
    }

    static const std::vector<std::string>& allNames() {
        static const std::vector<std::string> names = {
            "full",     "no_admission", "no_ratelimit",
            "no_backpressure", "no_retry",     "admission_only",
        };
        return names;
    }
};

struct ScenarioSpec {
    std::string name = "unnamed";
    int agents = 10;
    int turns = 3;
    int reps = 5;
    uint64_t seed = 42;
    size_t promptChars = 600;
    bool stream = false;

    int64_t staggerMs = 0;  // agent start times spread uniformly over this
    int64_t thinkMinMs = 0; // pause between turns
    int64_t thinkMaxMs = 0;

    MockConfig mock;

    // Proxy tuning; zeros fall back to sensible defaults in proxyConfig().
    long proxyRpm = 0; // 0: mirror mock.rpm
    long proxyTpm = 10000000;
    double maxConcurrency = 5.0;
    double latencyTargetMs = 3000;
    int maxAttempts = 5;
    int64_t retryBaseMs = 1000;
    int64_t retryMaxDelayMs = 30000;
    int64_t cooldownMs = 10000;
    int64_t minUpdateIntervalMs = 1000;
    size_t minSamplesPerUpdate = 5;
    long budgetPoolTokens = 10000000;
    size_t maxAgentsBudgeted = 100;

    std::vector<TaskSpec> tasks; // optional task-graph mode

    ProxyConfig proxyConfig(const std::string& upstreamBase, const AblationSet& ablate,
                            uint64_t proxySeed) const {
        ProxyConfig pc;
        pc.listenPort = 0;
        pc.upstreamBase = upstreamBase;
        pc.profile = *providerProfileByName("generic");
        pc.profile.name = "scenario";
        pc.rpm = proxyRpm > 0 ? proxyRpm : mock.rpm;
        pc.tpm = proxyTpm;
        pc.windowMs = mock.windowMs;
        pc.maxConcurrency = maxConcurrency;
        pc.latencyTargetMs = latencyTargetMs;
        pc.retry.maxAttempts = maxAttempts;
        pc.retry.baseDelayMs = retryBaseMs;
        pc.retry.maxDelayMs = retryMaxDelayMs;
        pc.bp.cooldownMs = cooldownMs;
        pc.bp.minUpdateIntervalMs = minUpdateIntervalMs;
        pc.bp.minSamplesPerUpdate = minSamplesPerUpdate;
        pc.budgetPoolTokens = budgetPoolTokens;
        pc.maxAgents = maxAgentsBudgeted;
        pc.enableAdmission = !ablate.admission;
        pc.enableRateLimit = !ablate.ratelimit;
        pc.enableBackpressure = !ablate.backpressure;
        pc.enableRetry = !ablate.retry;
        pc.serverThreads = std::max(32, agents * 2);
        pc.upstreamTimeoutMs = 120000;
        pc.seed = proxySeed;
        return pc;
    }
};

inline void to_json(nlohmann::json& j, const ScenarioSpec& s) {
    j = {{"name", s.name},
         {"agents", s.agents},
         {"turns", s.turns},
         {"reps", s.reps},
         {"seed", s.seed},
         {"prompt_chars", s.promptChars},
         {"stream", s.stream},
         {"stagger_ms", s.staggerMs},
         {"think_min_ms", s.thinkMinMs},
         {"think_max_ms", s.thinkMaxMs},
         {"mock",
          {{"rpm", s.mock.rpm},
           {"window_ms", s.mock.windowMs},
           {"max_connections", s.mock.maxConnections},
           {"p502", s.mock.p502},
           {"p_reset", s.mock.pReset},
           {"latency_base_ms", s.mock.latencyBaseMs},
           {"latency_jitter_ms", s.mock.latencyJitterMs},
           {"completion_chars", s.mock.completionChars},
           {"format", s.mock.format},
           {"stream_chunk_gap_ms", s.mock.streamChunkGapMs},
           {"spike",
            {{"period_ms", s.mock.spike.periodMs},
             {"magnitude_ms", s.mock.spike.magnitudeMs},
             {"duration_ms", s.mock.spike.durationMs}}}}},
         {"proxy",
          {{"rpm", s.proxyRpm},
           {"tpm", s.proxyTpm},
           {"max_concurrency", s.maxConcurrency},
           {"latency_target_ms", s.latencyTargetMs},
           {"max_attempts", s.maxAttempts},
           {"retry_base_ms", s.retryBaseMs},
           {"retry_max_delay_ms", s.retryMaxDelayMs},
           {"cooldown_ms", s.cooldownMs},
           {"min_update_interval_ms", s.minUpdateIntervalMs},
           {"min_samples_per_update", s.minSamplesPerUpdate},
           {"budget_pool_tokens", s.budgetPoolTokens},
           {"max_agents_budgeted", s.maxAgentsBudgeted}}}};
    if (!s.tasks.empty()) {
        nlohmann::json tasks = nlohmann::json::array();
        for (const auto& t : s.tasks)
            tasks.push_back({{"id", t.id},
                             {"priority", taskPriorityName(t.priority)},
                             {"est_tokens", t.estTokens},
                             {"deps", t.deps}});
        j["tasks"] = tasks;
    }
}

inline void from_json(const nlohmann::json& j, ScenarioSpec& s) {
    s.name = j.value("name", s.name);
    s.agents = j.value("agents", s.agents);
    s.turns = j.value("turns", s.turns);
    s.reps = j.value("reps", s.reps);
    s.seed = j.value("seed", s.seed);
    s.promptChars = j.value("prompt_chars", s.promptChars);
    s.stream = j.value("stream", s.stream);
    s.staggerMs = j.value("stagger_ms", s.staggerMs);
    s.thinkMinMs = j.value("think_min_ms", s.thinkMinMs);
    s.thinkMaxMs = j.value("think_max_ms", s.thinkMaxMs);
    if (j.contains("mock")) {
        const auto& m = j.at("mock");
        s.mock.rpm = m.value("rpm", s.mock.rpm);
        s.mock.windowMs = m.value("window_ms", s.mock.windowMs);
        s.mock.maxConnections = m.value("max_connections", s.mock.maxConnections);
        s.mock.p502 = m.value("p502", s.mock.p502);
        s.mock.pReset = m.value("p_reset", s.mock.pReset);
        s.mock.latencyBaseMs = m.value("latency_base_ms", s.mock.latencyBaseMs);
        s.mock.latencyJitterMs = m.value("latency_jitter_ms", s.mock.latencyJitterMs);
        s.mock.completionChars = m.value("completion_chars", s.mock.completionChars);
        s.mock.format = m.value("format", s.mock.format);
        s.mock.streamChunkGapMs = m.value("stream_chunk_gap_ms", s.mock.streamChunkGapMs);
        if (m.contains("spike")) {
            const auto& sp = m.at("spike");
            s.mock.spike.periodMs = sp.value("period_ms", s.mock.spike.periodMs);
            s.mock.spike.magnitudeMs = sp.value("magnitude_ms", s.mock.spike.magnitudeMs);
            s.mock.spike.durationMs = sp.value("duration_ms", s.mock.spike.durationMs);
        }
    }
    if (j.contains("proxy")) {
        const auto& p = j.at("proxy");
        s.proxyRpm = p.value("rpm", s.proxyRpm);
        s.proxyTpm = p.value("tpm", s.proxyTpm);
        s.maxConcurrency = p.value("max_concurrency", s.maxConcurrency);
        s.latencyTargetMs = p.value("latency_target_ms", s.latencyTargetMs);
        s.maxAttempts = p.value("max_attempts", s.maxAttempts);
        s.retryBaseMs = p.value("retry_base_ms", s.retryBaseMs);
        s.retryMaxDelayMs = p.value("retry_max_delay_ms", s.retryMaxDelayMs);
        s.cooldownMs = p.value("cooldown_ms", s.cooldownMs);
        s.minUpdateIntervalMs = p.value("min_update_interval_ms", s.minUpdateIntervalMs);
        s.minSamplesPerUpdate = p.value("min_samples_per_update", s.minSamplesPerUpdate);
        s.budgetPoolTokens = p.value("budget_pool_tokens", s.budgetPoolTokens);
        s.maxAgentsBudgeted = p.value("max_agents_budgeted", s.maxAgentsBudgeted);
    }
    s.tasks.clear();
    if (j.contains("tasks")) {
        for (const auto& tj : j.at("tasks")) {
            TaskSpec t;
            t.id = tj.at("id").get<std::string>();
            t.priority =
                taskPriorityFromName(tj.value("priority", std::string("normal")))
                    .value_or(TaskPriority::Normal);
            t.estTokens = tj.value("est_tokens", 0L);
            t.deps = tj.value("deps", std::vector<std::string>{});
            s.tasks.push_back(std::move(t));
        }
    }
}

struct AgentResult {
    int index = 0;
    bool alive = false;
    int completedTurns = 0;
    long tokensConsumed = 0;
    int lastStatus = 0;
    std::string failure;
    std::vector<double> latenciesMs;
};

struct RepResult {
    std::string scenario;
    RunMode mode = RunMode::Direct;
    int rep = 0;
    int agents = 0;
    int alive = 0;
    int dead = 0;
    double failurePct = 0.0;
    long wastedTokens = 0;
    long totalTokens = 0;
    double wallTimeS = 0.0;
    std::vector<double> latenciesMs;
    std::vector<AgentResult> agentResults;
    nlohmann::json proxyMetrics;
    nlohmann::json mockStats;
    // Task-mode extras (zero when the scenario has no task graph).
    int tasksDone = 0;
    int tasksFailed = 0;
};

// Mean over reps of one field.
template <typename Fn>
double meanOver(const std::vector<RepResult>& reps, Fn fn) {
    if (reps.empty())
        return 0.0;
    double sum = 0.0;
    for (const auto& r : reps)
        sum += static_cast<double>(fn(r));
    return sum / static_cast<double>(reps.size());
}

inline double medianOf(std::vector<double> v) {
    if (v.empty())
        return 0.0;
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

// ──────────────────────────────────────────────────────────────────────────────
// ScenarioRunner
// ──────────────────────────────────────────────────────────────────────────────
class ScenarioRunner {
public:
    explicit ScenarioRunner(ScenarioSpec spec) : spec_(std::move(spec)) {}

    // One full repetition. Seeds derive from (scenario seed, rep) so repeated
    // invocations reproduce byte-identical mock decision sequences.
    RepResult runRep(RunMode mode, int rep, const AblationSet& ablate = {}) {
        MockConfig mc = spec_.mock;
        mc.port = 0;
        mc.seed = spec_.seed * 1315423911ull + static_cast<uint64_t>(rep) + 1;
        MockUpstream mock(mc);
        if (!mock.start())
            throw std::runtime_error("mock upstream failed to start");

        std::unique_ptr<HivemindProxy> proxy;
        std::string host = "127.0.0.1";
        int targetPort = mock.port();
        if (mode == RunMode::Proxied) {
            auto pc = spec_.proxyConfig("http://127.0.0.1:" + std::to_string(mock.port()),
                                        ablate, mc.seed ^ 0x9e3779b97f4a7c15ull);
            proxy = std::make_unique<HivemindProxy>(pc);
            if (!proxy->start())
                throw std::runtime_error("proxy failed to start");
            targetPort = proxy->port();
        }

        RepResult result;
        result.scenario = spec_.name;
        result.mode = mode;
        result.rep = rep;

        int64_t t0 = steadyNowMs();
        if (spec_.tasks.empty())
            runAgentMode(host, targetPort, rep, result);
        else
            runTaskMode(host, targetPort, result);
        result.wallTimeS = static_cast<double>(steadyNowMs() - t0) / 1000.0;

        result.mockStats = mock.statsJson();
        if (proxy)
            result.proxyMetrics = proxy->metricsJson();
        if (proxy)
            proxy->stop();
        mock.stop();
        return result;
    }

    std::vector<RepResult> runAll(RunMode mode, const AblationSet& ablate = {}) {
        std::vector<RepResult> out;
        for (int rep = 0; rep < spec_.reps; ++rep)
            out.push_back(runRep(mode, rep, ablate));
        return out;
    }

    const ScenarioSpec& spec() const { return spec_; }

private:
    static std::string promptText(size_t chars, int agentIndex, int turn) {
        std::string seedText = "Agent " + std::to_string(agentIndex) + " working on turn " +
                               std::to_string(turn) + " of its assignment. ";
        static const std::string kFiller =
            "Please review the previous diff, fix the failing unit test, and explain the "
            "root cause in two sentences. Keep the patch minimal and do not refactor. ";
        std::string text = seedText;
        while (text.size() < chars)
            text += kFiller;
        text.resize(chars);
        return text;
    }

    // One agent session: `turns` sequential completions, dying on the first
    // failed exchange.
    AgentResult runAgent(const std::string& host, int port, int rep, int index) {
        AgentResult ar;
        ar.index = index;

        std::mt19937_64 rng(spec_.seed * 7919 + static_cast<uint64_t>(rep) * 541 +
                            static_cast<uint64_t>(index));
        if (spec_.staggerMs > 0) {
            std::uniform_int_distribution<int64_t> d(0, spec_.staggerMs);
            std::this_thread::sleep_for(std::chrono::milliseconds(d(rng)));
        }

        httplib::Client cli(host, port);
        cli.set_connection_timeout(std::chrono::seconds(120));
        cli.set_read_timeout(std::chrono::seconds(120));
        cli.set_write_timeout(std::chrono::seconds(120));

        for (int turn = 0; turn < spec_.turns; ++turn) {
            nlohmann::json body = {
                {"model", "test-model"},
                {"max_tokens", 256},
                {"messages",
                 nlohmann::json::array(
                     {{{"role", "user"},
                       {"content", promptText(spec_.promptChars, index, turn)}}})}};
            if (spec_.stream)
                body["stream"] = true;
            httplib::Headers headers = {
                {"x-hivemind-agent-id", "agent-" + std::to_string(index)},
                {"x-api-key", "scenario-key"},
            };

            int64_t t0 = steadyNowMs();
            auto res = cli.Post("/v1/messages", headers, body.dump(), "application/json");
            int64_t elapsed = steadyNowMs() - t0;

            if (!res) {
                ar.failure = "transport: " + httplib::to_string(res.error());
                return ar;
            }
            ar.lastStatus = res->status;
            if (res->status < 200 || res->status >= 300) {
                ar.failure = "status " + std::to_string(res->status);
                return ar;
            }

            ar.latenciesMs.push_back(static_cast<double>(elapsed));
            TokenUsage usage;
            if (auto u = extractUsageFromBody(res->body)) {
                usage = *u;
            } else if (spec_.stream) {
                SseUsageScanner scanner;
                scanner.feed(res->body);
                usage = scanner.finish();
            }
            if (usage.total() == 0)
                usage = heuristicUsage(body.dump().size(), res->body.size());
            ar.tokensConsumed += usage.total();
            ar.completedTurns = turn + 1;

            if (spec_.thinkMaxMs > spec_.thinkMinMs && turn + 1 < spec_.turns) {
                std::uniform_int_distribution<int64_t> d(spec_.thinkMinMs, spec_.thinkMaxMs);
                std::this_thread::sleep_for(std::chrono::milliseconds(d(rng)));
            }
        }
        ar.alive = true;
        return ar;
    }

    void runAgentMode(const std::string& host, int port, int rep, RepResult& result) {
        std::vector<AgentResult> agents(spec_.agents);
        std::vector<std::thread> threads;
        threads.reserve(spec_.agents);
        for (int i = 0; i < spec_.agents; ++i)
            threads.emplace_back(
                [&, i] { agents[static_cast<size_t>(i)] = runAgent(host, port, rep, i); });
        for (auto& t : threads)
            t.join();

        result.agents = spec_.agents;
        for (auto& ar : agents) {
            if (ar.alive) {
                ++result.alive;
            } else {
                ++result.dead;
                result.wastedTokens += ar.tokensConsumed;
            }
            result.totalTokens += ar.tokensConsumed;
            result.latenciesMs.insert(result.latenciesMs.end(), ar.latenciesMs.begin(),
                                      ar.latenciesMs.end());
        }
        result.failurePct =
            result.agents > 0
                ? 100.0 * static_cast<double>(result.dead) / static_cast<double>(result.agents)
                : 0.0;
        result.agentResults = std::move(agents);
    }

    // Task-graph mode: a worker pool drains the queue; each task is one
    // completion sized by its token estimate. A failed exchange fails the
    // task and, through the queue, everything depending on it.
    void runTaskMode(const std::string& host, int port, RepResult& result) {
        TaskQueue queue;
        auto sr = queue.submitBatch(spec_.tasks);
        if (!sr.ok)
            throw std::runtime_error("scenario task graph rejected: " + sr.error);

        std::mutex mu;
        std::atomic<int> done{0}, failed{0};
        std::atomic<long> tokens{0};
        std::vector<std::thread> workers;
        int workerCount = std::max(1, spec_.agents);
        for (int w = 0; w < workerCount; ++w) {
            workers.emplace_back([&, w] {
                httplib::Client cli(host, port);
                cli.set_read_timeout(std::chrono::seconds(120));
                for (;;) {
                    std::optional<std::string> id;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        id = queue.nextTask();
                        if (!id && queue.drained())
                            return;
                    }
                    if (!id) {
                        std::this_thread::sleep_for(std::chrono::milliseconds(10));
                        continue;
                    }
                    long est = 0;
                    for (const auto& t : spec_.tasks)
                        if (t.id == *id)
                            est = t.estTokens;
                    size_t chars = static_cast<size_t>(std::max(64L, est * 4));
                    nlohmann::json body = {
                        {"model", "test-model"},
                        {"max_tokens", 256},
                        {"messages",
                         nlohmann::json::array({{{"role", "user"},
                                                 {"content", promptText(chars, w, 0)}}})}};
                    httplib::Headers headers = {
                        {"x-hivemind-agent-id", "task-worker-" + std::to_string(w)},
                        {"x-api-key", "scenario-key"},
                    };
                    auto res =
                        cli.Post("/v1/messages", headers, body.dump(), "application/json");
                    bool ok = res && res->status >= 200 && res->status < 300;
                    if (ok) {
                        if (auto u = extractUsageFromBody(res->body))
                            tokens.fetch_add(u->total());
                        done.fetch_add(1);
                    } else {
                        failed.fetch_add(1);
                    }
                    std::lock_guard<std::mutex> lock(mu);
                    queue.complete(*id, ok, ok ? "" : "request_failed");
                }
            });
        }
        for (auto& t : workers)
            t.join();

        result.agents = static_cast<int>(spec_.tasks.size());
        result.tasksDone = done.load();
        result.tasksFailed = static_cast<int>(spec_.tasks.size()) - done.load();
        result.alive = result.tasksDone;
        result.dead = result.tasksFailed;
        result.totalTokens = tokens.load();
        result.failurePct = result.agents > 0 ? 100.0 * result.dead / result.agents : 0.0;
    }

    ScenarioSpec spec_;
};

// ──────────────────────────────────────────────────────────────────────────────
// Reports
// ──────────────────────────────────────────────────────────────────────────────

// Exact column contract; one row per repetition.
inline std::string repResultsCsv(const std::vector<RepResult>& reps) {
    std::ostringstream out;
    out << "scenario, mode, agents, alive, dead, failure_pct, wasted_tokens, wall_time_s\n";
    for (const auto& r : reps) {
        std::ostringstream fp, wt;
        fp.precision(1);
        fp << std::fixed << r.failurePct;
        wt.precision(2);
        wt << std::fixed << r.wallTimeS;
        out << r.scenario << ", " << runModeName(r.mode) << ", " << r.agents << ", "
            << r.alive << ", " << r.dead << ", " << fp.str() << ", " << r.wastedTokens
            << ", " << wt.str() << "\n";
    }
    return out.str();
}

inline nlohmann::json repResultJson(const RepResult& r, bool detail) {
    nlohmann::json j = {{"scenario", r.scenario}, {"mode", runModeName(r.mode)},
                        {"rep", r.rep},          {"agents", r.agents},
                        {"alive", r.alive},      {"dead", r.dead},
                        {"failure_pct", r.failurePct},
                        {"wasted_tokens", r.wastedTokens},
                        {"total_tokens", r.totalTokens},
                        {"wall_time_s", r.wallTimeS}};
    if (r.tasksDone || r.tasksFailed)
        j["tasks"] = {{"done", r.tasksDone}, {"failed", r.tasksFailed}};
    if (detail) {
        j["median_latency_ms"] = medianOf(r.latenciesMs);
        nlohmann::json failures = nlohmann::json::object();
        for (const auto& ar : r.agentResults)
            if (!ar.alive && !ar.failure.empty())
                failures[std::to_string(ar.index)] = ar.failure;
        if (!failures.empty())
            j["failures"] = failures;
        if (!r.proxyMetrics.is_null())
            j["proxy_metrics"] = r.proxyMetrics;
        if (!r.mockStats.is_null())
            j["mock_stats"] = r.mockStats;
    }
    return j;
}

inline nlohmann::json aggregateJson(const std::vector<RepResult>& reps) {
    return {{"reps", reps.size()},
            {"mean_failure_pct", meanOver(reps, [](const RepResult& r) { return r.failurePct; })},
            {"mean_wasted_tokens",
             meanOver(reps, [](const RepResult& r) { return r.wastedTokens; })},
            {"mean_total_tokens",
             meanOver(reps, [](const RepResult& r) { return r.totalTokens; })},
            {"mean_alive", meanOver(reps, [](const RepResult& r) { return r.alive; })},
            {"mean_wall_time_s",
             meanOver(reps, [](const RepResult& r) { return r.wallTimeS; })}};
}

// Daily cost of wasted tokens at several per-million price points, plus the
// savings the proxy yields over direct mode.
struct PricePoint {
    std::string model;
    double usdPerMillion;
};

inline const std::vector<PricePoint>& defaultPricePoints() {
    static const std::vector<PricePoint> points = {
        {"small", 0.80},
        {"medium", 3.00},
        {"large", 15.00},
    };
    return points;
}

inline nlohmann::json costReport(double directWastedMean, double proxiedWastedMean,
                                 int runsPerDay = 10) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& p : defaultPricePoints()) {
        double directDaily = directWastedMean * p.usdPerMillion / 1e6 * runsPerDay;
        double proxiedDaily = proxiedWastedMean * p.usdPerMillion / 1e6 * runsPerDay;
        double savingsPct = directDaily > 0.0
                                ? (1.0 - proxiedDaily / directDaily) * 100.0
                                : (proxiedDaily > 0.0 ? 0.0 : 100.0);
        rows.push_back({{"model", p.model},
                        {"usd_per_million_tokens", p.usdPerMillion},
                        {"direct_daily_usd", directDaily},
                        {"proxied_daily_usd", proxiedDaily},
                        {"savings_pct", savingsPct}});
    }
    return {{"runs_per_day", runsPerDay},
            {"direct_wasted_tokens_mean", directWastedMean},
            {"proxied_wasted_tokens_mean", proxiedWastedMean},
            {"price_points", rows}};
}

// Scenario preset loading.
inline ScenarioSpec loadScenario(const std::string& dir, const std::string& name) {
    std::filesystem::path path = std::filesystem::path(dir) / (name + ".json");
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("scenario preset not found: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);
    ScenarioSpec spec;
    from_json(j, spec);
    return spec;
}

inline std::vector<std::string> listScenarios(const std::string& dir) {
    std::vector<std::string> names;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
        if (entry.path().extension() == ".json")
            names.push_back(entry.path().stem().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

} // namespace hivemind
