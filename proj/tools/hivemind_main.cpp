// hivemind: scheduling proxy for fleets of concurrent LLM agents.
//
// Subcommands:
//   proxy  run the transparent scheduling proxy in front of one upstream
//   mock   run the configurable mock upstream (rate limits, injected faults)
//   eval   replay scenarios against the mock, directly or through the proxy
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <hivemind/config.hpp>
#include <hivemind/harness.hpp>
#include <hivemind/mock_upstream.hpp>
#include <hivemind/proxy.hpp>

namespace {

volatile std::sig_atomic_t g_interrupted = 0;

void onSignal(int) {
    g_interrupted = 1;
}

void waitForInterrupt() {
    std::signal(SIGINT, onSignal);
    std::signal(SIGTERM, onSignal);
    while (!g_interrupted)
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

// "base" or "base:jitter"
bool parseLatencySpec(const std::string& text, int64_t& baseMs, int64_t& jitterMs) {
    std::istringstream in(text);
    std::string part;
    if (!std::getline(in, part, ':'))
        return false;
    try {
        baseMs = std::stoll(part);
        if (std::getline(in, part, ':'))
            jitterMs = std::stoll(part);
    } catch (...) {
        return false;
    }
    return true;
}

// "period:magnitude" or "period:magnitude:duration"
bool parseSpikeSpec(const std::string& text, hivemind::MockSpike& spike) {
    std::istringstream in(text);
    std::string part;
    std::vector<int64_t> values;
    try {
        while (std::getline(in, part, ':'))
            values.push_back(std::stoll(part));
    } catch (...) {
        return false;
    }
    if (values.size() < 2 || values.size() > 3)
        return false;
    spike.periodMs = values[0];
    spike.magnitudeMs = values[1];
    spike.durationMs = values.size() == 3 ? values[2] : 0;
    return true;
}

int runProxy(hivemind::ProxyConfig cfg, bool printConfig) {
    if (auto err = hivemind::validateProxyConfig(cfg)) {
        std::cerr << "config error: " << *err << "\n";
        return 2;
    }
    if (printConfig) {
        nlohmann::json j = cfg;
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    hivemind::HivemindProxy proxy(cfg);
    if (!proxy.start()) {
        std::cerr << "error: failed to bind " << cfg.listenHost << ":" << cfg.listenPort
                  << "\n";
        return 1;
    }
    std::cout << "hivemind proxy listening on " << cfg.listenHost << ":" << proxy.port()
              << " -> " << cfg.upstreamBase << " (profile: " << proxy.config().profile.name
              << ")\n"
              << "metrics at /hm/metrics; Ctrl-C to stop\n";
    waitForInterrupt();
    proxy.stop();
    return 0;
}

int runMock(hivemind::MockConfig cfg, bool printConfig) {
    if (auto err = hivemind::validateMockConfig(cfg)) {
        std::cerr << "config error: " << *err << "\n";
        return 2;
    }
    if (printConfig) {
        nlohmann::json j = cfg;
        std::cout << j.dump(2) << "\n";
        return 0;
    }
    hivemind::MockUpstream mock(cfg);
    if (!mock.start()) {
        std::cerr << "error: failed to bind " << cfg.host << ":" << cfg.port << "\n";
        return 1;
    }
    std::cout << "mock upstream listening on " << cfg.host << ":" << mock.port() << " (rpm "
              << cfg.rpm << ", p502 " << cfg.p502 << ", p_reset " << cfg.pReset << ", format "
              << cfg.format << ")\n"
              << "stats at /__mock/stats, reset at POST /__mock/reset; Ctrl-C to stop\n";
    waitForInterrupt();
    mock.stop();
    return 0;
}

void printGroupSummary(const std::string& label, const std::vector<hivemind::RepResult>& reps) {
    double failure = hivemind::meanOver(reps, [](const auto& r) { return r.failurePct; });
    double wasted = hivemind::meanOver(reps, [](const auto& r) { return r.wastedTokens; });
    double wall = hivemind::meanOver(reps, [](const auto& r) { return r.wallTimeS; });
    std::cout << "  " << label << ": failure " << failure << "%  wasted " << wasted
              << " tokens  wall " << wall << " s  (" << reps.size() << " reps)\n";
}

struct EvalOptions {
    std::string scenario;
    std::string scenariosDir = "scenarios";
    std::string mode = "proxy";
    bool compare = false;
    std::string ablation;
    int reps = 0;
    int64_t seed = -1;
    std::string out;
    bool detail = false;
    bool list = false;
};

int runEval(const EvalOptions& opt) {
    using namespace hivemind;
    if (opt.list) {
        for (const auto& name : listScenarios(opt.scenariosDir))
            std::cout << name << "\n";
        return 0;
    }
    if (opt.scenario.empty()) {
        std::cerr << "usage error: --scenario is required (or --list)\n";
        return 2;
    }
    if (opt.mode != "direct" && opt.mode != "proxy" && opt.mode != "proxied") {
        std::cerr << "usage error: mode: must be direct or proxy\n";
        return 2;
    }

    ScenarioSpec spec = loadScenario(opt.scenariosDir, opt.scenario);
    if (opt.reps > 0)
        spec.reps = opt.reps;
    if (opt.seed >= 0)
        spec.seed = static_cast<uint64_t>(opt.seed);
    ScenarioRunner runner(spec);

    std::vector<RepResult> allReps;
    nlohmann::json report = {{"scenario", spec.name}, {"seed", spec.seed}, {"reps", spec.reps}};

    std::cout << "scenario " << spec.name << " (" << spec.agents << " agents, " << spec.turns
              << " turns, " << spec.reps << " reps)\n";

    if (opt.compare) {
        auto direct = runner.runAll(RunMode::Direct);
        auto proxied = runner.runAll(RunMode::Proxied);
        printGroupSummary("direct ", direct);
        printGroupSummary("proxied", proxied);
        nlohmann::json directReps = nlohmann::json::array();
        for (const auto& r : direct)
            directReps.push_back(repResultJson(r, opt.detail));
        nlohmann::json proxiedReps = nlohmann::json::array();
        for (const auto& r : proxied)
            proxiedReps.push_back(repResultJson(r, opt.detail));
        report["direct"] = {{"aggregate", aggregateJson(direct)}, {"reps", directReps}};
        report["proxied"] = {{"aggregate", aggregateJson(proxied)}, {"reps", proxiedReps}};
        report["cost"] = costReport(
            meanOver(direct, [](const auto& r) { return r.wastedTokens; }),
            meanOver(proxied, [](const auto& r) { return r.wastedTokens; }));
        allReps.insert(allReps.end(), direct.begin(), direct.end());
        allReps.insert(allReps.end(), proxied.begin(), proxied.end());
    } else if (!opt.ablation.empty()) {
        std::vector<std::string> names;
        if (opt.ablation == "all") {
            names = AblationSet::allNames();
        } else {
            std::istringstream in(opt.ablation);
            std::string part;
            while (std::getline(in, part, ','))
                if (!part.empty())
                    names.push_back(part);
        }
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& name : names) {
            auto set = AblationSet::byName(name);
            if (!set) {
                std::cerr << "usage error: ablation: unknown configuration '" << name
                          << "'\n";
                return 2;
            }
            auto reps = runner.runAll(RunMode::Proxied, *set);
            printGroupSummary(name, reps);
            nlohmann::json repArr = nlohmann::json::array();
            for (auto& r : reps) {
                r.scenario = spec.name + "/" + name;
                repArr.push_back(repResultJson(r, opt.detail));
            }
            rows.push_back({{"config", name},
                            {"aggregate", aggregateJson(reps)},
                            {"reps", repArr}});
            allReps.insert(allReps.end(), reps.begin(), reps.end());
        }
        report["ablation"] = rows;
    } else {
        RunMode mode = opt.mode == "direct" ? RunMode::Direct : RunMode::Proxied;
        auto reps = runner.runAll(mode);
        printGroupSummary(runModeName(mode), reps);
        nlohmann::json repArr = nlohmann::json::array();
        for (const auto& r : reps)
            repArr.push_back(repResultJson(r, opt.detail));
        report[runModeName(mode)] = {{"aggregate", aggregateJson(reps)}, {"reps", repArr}};
        allReps.insert(allReps.end(), reps.begin(), reps.end());
    }

    if (!opt.out.empty()) {
        std::ofstream outFile(opt.out);
        if (!outFile) {
            std::cerr << "error: cannot write " << opt.out << "\n";
            return 1;
        }
        if (opt.out.size() >= 4 && opt.out.substr(opt.out.size() - 4) == ".csv")
            outFile << repResultsCsv(allReps);
        else
            outFile << report.dump(2) << "\n";
        std::cout << "report written to " << opt.out << "\n";
    } else {
        std::cout << report.dump(2) << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hivemind: transparent scheduling proxy for concurrent LLM agents"};
    app.require_subcommand(1);

    // ── proxy ───────────────────────────────────────────────────────────────
    auto* proxyCmd = app.add_subcommand("proxy", "Run the scheduling proxy");
    std::string proxyConfigPath, listenHost, upstream, provider = "auto", checkpointDir;
    int listenPort = -1;
    long rpm = 0, tpm = 0;
    int64_t windowMs = 0;
    double maxConcurrency = 0, latencyTargetMs = 0;
    long budgetPool = 0;
    long maxAgents = 0;
    std::vector<std::string> disabled;
    uint64_t proxySeed = 0;
    bool proxyPrint = false;
    proxyCmd->add_option("--config", proxyConfigPath, "JSON config file");
    proxyCmd->add_option("--listen", listenHost, "Listen host (default 127.0.0.1)");
    proxyCmd->add_option("--port", listenPort, "Listen port (default 8765)");
    proxyCmd->add_option("--upstream", upstream, "Upstream base URL, e.g. http://host:port");
    proxyCmd->add_option("--provider", provider,
                         "Provider profile: auto, anthropic, openai, azure_openai, "
                         "google_ai, ollama, generic");
    proxyCmd->add_option("--rpm", rpm, "Requests per window");
    proxyCmd->add_option("--tpm", tpm, "Tokens per window");
    proxyCmd->add_option("--window-ms", windowMs, "Sliding window length in ms");
    proxyCmd->add_option("--max-concurrency", maxConcurrency, "Admission concurrency cap");
    proxyCmd->add_option("--latency-target-ms", latencyTargetMs, "AIMD latency target");
    proxyCmd->add_option("--budget-pool", budgetPool, "Global token pool");
    proxyCmd->add_option("--max-agents", maxAgents, "Expected agent count (default ceilings)");
    proxyCmd->add_option("--checkpoint-dir", checkpointDir, "Where budget kills checkpoint");
    proxyCmd->add_option("--disable", disabled,
                         "Disable a primitive (repeatable): admission, ratelimit, "
                         "backpressure, retry, budget");
    proxyCmd->add_option("--seed", proxySeed, "Retry jitter seed (0: random)");
    proxyCmd->add_flag("--print-config", proxyPrint, "Dump the effective config and exit");

    // ── mock ────────────────────────────────────────────────────────────────
    auto* mockCmd = app.add_subcommand("mock", "Run the mock upstream");
    std::string mockConfigPath, latencySpec, spikeSpec, mockFormat;
    hivemind::MockConfig mockCfg;
    bool mockPrint = false;
    long mockRpm = 0;
    int mockPort = -1, mockMaxConn = 0;
    int64_t mockWindowMs = 0;
    double p502 = -1, pReset = -1;
    uint64_t mockSeed = 0;
    mockCmd->add_option("--config", mockConfigPath, "JSON config file");
    mockCmd->add_option("--port", mockPort, "Listen port (0 for ephemeral)");
    mockCmd->add_option("--rpm", mockRpm, "Requests per window");
    mockCmd->add_option("--window-ms", mockWindowMs, "Window length in ms");
    mockCmd->add_option("--max-connections", mockMaxConn, "Concurrent connection cap");
    mockCmd->add_option("--p502", p502, "Probability of an injected 502");
    mockCmd->add_option("--p-reset", pReset, "Probability of an abrupt connection reset");
    mockCmd->add_option("--latency", latencySpec, "Service latency ms: base or base:jitter");
    mockCmd->add_option("--spike", spikeSpec,
                        "Latency spike: period:magnitude[:duration] in ms");
    mockCmd->add_option("--format", mockFormat, "Response dialect: anthropic or openai");
    mockCmd->add_option("--seed", mockSeed, "RNG seed for fault draws");
    mockCmd->add_flag("--print-config", mockPrint, "Dump the effective config and exit");

    // ── eval ────────────────────────────────────────────────────────────────
    auto* evalCmd = app.add_subcommand("eval", "Run scenarios against the mock");
    EvalOptions evalOpt;
    evalCmd->add_option("--scenario", evalOpt.scenario, "Scenario preset name");
    evalCmd->add_option("--scenarios-dir", evalOpt.scenariosDir,
                        "Directory of scenario presets (default ./scenarios)");
    evalCmd->add_option("--mode", evalOpt.mode, "direct or proxy");
    evalCmd->add_flag("--compare", evalOpt.compare, "Run direct first, then proxied");
    evalCmd->add_option("--ablation", evalOpt.ablation,
                        "Comma list of configs (full, no_admission, no_ratelimit, "
                        "no_backpressure, no_retry, admission_only) or 'all'");
    evalCmd->add_option("--reps", evalOpt.reps, "Repetitions (overrides preset)");
    evalCmd->add_option("--seed", evalOpt.seed, "Base seed (overrides preset)");
    evalCmd->add_option("--out", evalOpt.out, "Report file (.json or .csv)");
    evalCmd->add_flag("--detail", evalOpt.detail, "Include per-rep metrics in JSON");
    evalCmd->add_flag("--list", evalOpt.list, "List available scenario presets");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (proxyCmd->parsed()) {
            hivemind::ProxyConfig cfg;

            // defaults → profile → config file → flags
            nlohmann::json fileJson;
            if (!proxyConfigPath.empty())
                fileJson = hivemind::loadConfigFile(proxyConfigPath);

            std::string upstreamUrl = !upstream.empty()
                                          ? upstream
                                          : fileJson.value("upstream", std::string());
            std::string providerName =
                provider != "auto" ? provider
                                   : (fileJson.contains("provider") &&
                                              fileJson["provider"].contains("name")
                                          ? fileJson["provider"]["name"].get<std::string>()
                                          : std::string("auto"));
            if (providerName == "auto") {
                hivemind::applyProfile(cfg, hivemind::detectProvider(upstreamUrl));
            } else if (auto p = hivemind::providerProfileByName(providerName)) {
                hivemind::applyProfile(cfg, *p);
            } else {
                std::cerr << "config error: provider: unknown profile '" << providerName
                          << "'\n";
                return 2;
            }

            if (!fileJson.is_null())
                hivemind::from_json(fileJson, cfg);

            if (!upstream.empty())
                cfg.upstreamBase = upstream;
            if (!listenHost.empty())
                cfg.listenHost = listenHost;
            if (listenPort >= 0)
                cfg.listenPort = listenPort;
            if (rpm != 0)
                cfg.rpm = rpm;
            if (tpm != 0)
                cfg.tpm = tpm;
            if (windowMs != 0)
                cfg.windowMs = windowMs;
            if (maxConcurrency != 0)
                cfg.maxConcurrency = maxConcurrency;
            if (latencyTargetMs != 0)
                cfg.latencyTargetMs = latencyTargetMs;
            if (budgetPool != 0)
                cfg.budgetPoolTokens = budgetPool;
            if (maxAgents != 0)
                cfg.maxAgents = static_cast<size_t>(maxAgents);
            if (!checkpointDir.empty())
                cfg.checkpointDir = checkpointDir;
            if (proxySeed != 0)
                cfg.seed = proxySeed;
            for (const auto& d : disabled) {
                if (d == "admission")
                    cfg.enableAdmission = false;
                else if (d == "ratelimit")
                    cfg.enableRateLimit = false;
                else if (d == "backpressure")
                    cfg.enableBackpressure = false;
                else if (d == "retry")
                    cfg.enableRetry = false;
                else if (d == "budget")
                    cfg.enableBudget = false;
                else {
                    std::cerr << "usage error: disable: unknown primitive '" << d << "'\n";
                    return 2;
                }
            }
            return runProxy(cfg, proxyPrint);
        }

        if (mockCmd->parsed()) {
            if (!mockConfigPath.empty()) {
                auto fileJson = hivemind::loadConfigFile(mockConfigPath);
                hivemind::from_json(fileJson, mockCfg);
            }
            if (mockPort >= 0)
                mockCfg.port = mockPort;
            if (mockRpm != 0)
                mockCfg.rpm = mockRpm;
            if (mockWindowMs != 0)
                mockCfg.windowMs = mockWindowMs;
            if (mockMaxConn != 0)
                mockCfg.maxConnections = mockMaxConn;
            if (p502 >= 0)
                mockCfg.p502 = p502;
            if (pReset >= 0)
                mockCfg.pReset = pReset;
            if (!latencySpec.empty() &&
                !parseLatencySpec(latencySpec, mockCfg.latencyBaseMs,
                                  mockCfg.latencyJitterMs)) {
                std::cerr << "usage error: latency: expected base or base:jitter\n";
                return 2;
            }
            if (!spikeSpec.empty() && !parseSpikeSpec(spikeSpec, mockCfg.spike)) {
                std::cerr << "usage error: spike: expected period:magnitude[:duration]\n";
                return 2;
            }
            if (!mockFormat.empty())
                mockCfg.format = mockFormat;
            if (mockSeed != 0)
                mockCfg.seed = mockSeed;
            return runMock(mockCfg, mockPrint);
        }

        if (evalCmd->parsed())
            return runEval(evalOpt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
