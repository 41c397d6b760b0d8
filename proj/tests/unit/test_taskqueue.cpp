#include <catch2/catch_amalgamated.hpp>

#include <hivemind/taskqueue.hpp>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace hivemind;

namespace {

// Independent cycle oracle: plain Kahn's algorithm over the batch graph.
// Returns true when the graph is acyclic. Kept separate from the queue's own
// detector so the two can disagree and fail the test.
bool kahnAcyclic(const std::vector<TaskSpec>& batch) {
    std::map<std::string, size_t> indeg;
    std::map<std::string, std::vector<std::string>> out; // dep -> dependents
    for (const auto& t : batch)
        indeg[t.id] = 0;
    for (const auto& t : batch)
        for (const auto& d : t.deps) {
            out[d].push_back(t.id);
            ++indeg[t.id];
        }
    std::vector<std::string> frontier;
    for (const auto& [id, deg] : indeg)
        if (deg == 0)
            frontier.push_back(id);
    size_t visited = 0;
    while (!frontier.empty()) {
        auto id = frontier.back();
        frontier.pop_back();
        ++visited;
        for (const auto& next : out[id])
            if (--indeg[next] == 0)
                frontier.push_back(next);
    }
    return visited == batch.size();
}

std::string taskName(int i) {
    return "t" + std::to_string(i);
}

// Random graph over n nodes. Forward edges only (j depends on i < j) keeps it
// acyclic. Half the time one extra backward edge is mixed in: either the
// reverse of an existing edge (a certain cycle) or a random backward edge,
// which closes a cycle only when a forward path already connects the pair.
// Ground truth always comes from the oracle, never from construction.
std::vector<TaskSpec> randomGraph(std::mt19937_64& rng, int n, double pEdge, double pBack) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<TaskSpec> batch(static_cast<size_t>(n));
    std::vector<std::pair<int, int>> fwd; // (dependent, dependency)
    for (int i = 0; i < n; ++i) {
        batch[static_cast<size_t>(i)].id = taskName(i);
        batch[static_cast<size_t>(i)].estTokens = static_cast<long>(rng() % 1000);
        batch[static_cast<size_t>(i)].priority =
            static_cast<TaskPriority>(rng() % 4);
        for (int j = 0; j < i; ++j)
            if (coin(rng) < pEdge) {
                batch[static_cast<size_t>(i)].deps.push_back(taskName(j));
                fwd.emplace_back(i, j);
            }
    }
    if (n >= 2 && coin(rng) < pBack) {
        if (!fwd.empty() && coin(rng) < 0.5) {
            auto [i, j] = fwd[rng() % fwd.size()];
            batch[static_cast<size_t>(j)].deps.push_back(taskName(i));
        } else {
            int i = static_cast<int>(rng() % static_cast<uint64_t>(n - 1));
            int j = i + 1 + static_cast<int>(rng() % static_cast<uint64_t>(n - i - 1));
            batch[static_cast<size_t>(i)].deps.push_back(taskName(j)); // i < j: backward
        }
    }
    return batch;
}

} // namespace

TEST_CASE("cycle detection agrees with Kahn on 1000 random graphs", "[taskqueue]") {
    std::mt19937_64 rng(20240817);
    int cyclic = 0, acyclic = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        int n = 1 + static_cast<int>(rng() % 100);
        auto batch = randomGraph(rng, n, 0.06, 0.5);
        bool oracle = kahnAcyclic(batch);
        TaskQueue queue;
        auto sr = queue.submitBatch(batch);
        REQUIRE(sr.ok == oracle);
        (oracle ? acyclic : cyclic) += 1;
        if (!oracle) {
            REQUIRE(sr.error.rfind("dependency cycle: ", 0) == 0);
            REQUIRE(queue.size() == 0); // all-or-nothing
            continue;
        }
        // Drain and check the dispatch order respects every dependency.
        std::map<std::string, size_t> position;
        size_t dispatched = 0;
        while (auto id = queue.nextTask()) {
            position[*id] = dispatched++;
            queue.complete(*id, true);
        }
        REQUIRE(dispatched == batch.size());
        REQUIRE(queue.drained());
        for (const auto& t : batch)
            for (const auto& d : t.deps)
                REQUIRE(position.at(d) < position.at(t.id));
    }
    // The generator must actually exercise both classes.
    REQUIRE(cyclic > 100);
    REQUIRE(acyclic > 100);
}

TEST_CASE("ready order: priority class, then cheapest, then submission", "[taskqueue]") {
    TaskQueue queue;
    REQUIRE(queue.submit({"slowCritical", TaskPriority::Critical, 500, {}}).ok);
    REQUIRE(queue.submit({"bulky", TaskPriority::Normal, 100, {}}).ok);
    REQUIRE(queue.submit({"fastCritical", TaskPriority::Critical, 200, {}}).ok);
    REQUIRE(queue.submit({"urgent", TaskPriority::High, 50, {}}).ok);
    REQUIRE(queue.submit({"tieFirst", TaskPriority::Normal, 100, {}}).ok);

    std::vector<std::string> order;
    while (auto id = queue.nextTask()) {
        order.push_back(*id);
        queue.complete(*id, true);
    }
    REQUIRE(order == std::vector<std::string>{"fastCritical", "slowCritical", "urgent",
                                              "bulky", "tieFirst"});
}

TEST_CASE("a task becomes ready only when all dependencies are done", "[taskqueue]") {
    TaskQueue queue;
    REQUIRE(queue.submit({"a", TaskPriority::Normal, 10, {}}).ok);
    REQUIRE(queue.submit({"b", TaskPriority::Normal, 10, {}}).ok);
    REQUIRE(queue.submit({"joined", TaskPriority::Critical, 1, {"a", "b"}}).ok);

    REQUIRE(queue.readyCount() == 2);
    auto first = queue.nextTask();
    REQUIRE(first.has_value());
    queue.complete(*first, true);
    REQUIRE(queue.state("joined") == TaskState::Pending);

    auto second = queue.nextTask();
    REQUIRE(second.has_value());
    queue.complete(*second, true);
    REQUIRE(queue.state("joined") == TaskState::Ready);
    REQUIRE(queue.nextTask() == "joined");
}

TEST_CASE("failure cascades transitively with the blaming dependency", "[taskqueue]") {
    TaskQueue queue;
    REQUIRE(queue.submit({"root", TaskPriority::Normal, 10, {}}).ok);
    REQUIRE(queue.submit({"mid", TaskPriority::Normal, 10, {"root"}}).ok);
    REQUIRE(queue.submit({"leaf", TaskPriority::Normal, 10, {"mid"}}).ok);
    REQUIRE(queue.submit({"bystander", TaskPriority::Normal, 10, {}}).ok);

    REQUIRE(queue.nextTask() == "root");
    queue.complete("root", false, "upstream exploded");

    REQUIRE(queue.state("root") == TaskState::Failed);
    REQUIRE(queue.state("mid") == TaskState::Failed);
    REQUIRE(queue.state("leaf") == TaskState::Failed);
    REQUIRE(queue.failureReason("root") == "upstream exploded");
    REQUIRE(queue.failureReason("mid") == "dependency_failed: root");
    REQUIRE(queue.failureReason("leaf") == "dependency_failed: mid");

    // Unrelated work is untouched and the queue still drains.
    REQUIRE(queue.state("bystander") == TaskState::Ready);
    REQUIRE(queue.nextTask() == "bystander");
    queue.complete("bystander", true);
    REQUIRE(queue.drained());
}

TEST_CASE("a pending dependent with one failed dependency never dispatches", "[taskqueue]") {
    TaskQueue queue;
    REQUIRE(queue.submit({"a", TaskPriority::Normal, 10, {}}).ok);
    REQUIRE(queue.submit({"b", TaskPriority::Normal, 10, {}}).ok);
    REQUIRE(queue.submit({"joined", TaskPriority::Critical, 1, {"a", "b"}}).ok);

    REQUIRE(queue.nextTask() == "a");
    queue.complete("a", true);
    REQUIRE(queue.nextTask() == "b");
    queue.complete("b", false, "worker crashed");

    // One dependency succeeded, the other failed: the join must fail, keep
    // the blaming reason, and never appear in dispatch.
    REQUIRE(queue.failureReason("b") == "worker crashed");
    REQUIRE(queue.state("joined") == TaskState::Failed);
    REQUIRE(queue.failureReason("joined") == "dependency_failed: b");
    REQUIRE_FALSE(queue.nextTask().has_value());
    REQUIRE(queue.drained());
}

TEST_CASE("incremental submit rejects unknown and forward dependencies", "[taskqueue]") {
    TaskQueue queue;
    auto sr = queue.submit({"needy", TaskPriority::Normal, 10, {"ghost"}});
    REQUIRE_FALSE(sr.ok);
    REQUIRE(sr.error == "unknown dependency: ghost (required by needy)");
    REQUIRE(queue.size() == 0);

    REQUIRE(queue.submit({"ghost", TaskPriority::Normal, 10, {}}).ok);
    REQUIRE(queue.submit({"needy", TaskPriority::Normal, 10, {"ghost"}}).ok);
}

TEST_CASE("duplicate ids are rejected in both submission paths", "[taskqueue]") {
    TaskQueue queue;
    REQUIRE(queue.submit({"once", TaskPriority::Normal, 10, {}}).ok);
    REQUIRE_FALSE(queue.submit({"once", TaskPriority::Normal, 10, {}}).ok);

    auto sr = queue.submitBatch({{"x", TaskPriority::Normal, 1, {}},
                                 {"x", TaskPriority::Normal, 2, {}}});
    REQUIRE_FALSE(sr.ok);
    REQUIRE(sr.error == "duplicate task id: x");
}

TEST_CASE("batch cycles are rejected with a concrete cycle path", "[taskqueue]") {
    TaskQueue queue;
    auto sr = queue.submitBatch({{"a", TaskPriority::Normal, 1, {"c"}},
                                 {"b", TaskPriority::Normal, 1, {"a"}},
                                 {"c", TaskPriority::Normal, 1, {"b"}}});
    REQUIRE_FALSE(sr.ok);
    REQUIRE(sr.error.rfind("dependency cycle: ", 0) == 0);
    // The rendered path must mention each participant and close on itself.
    std::string path = sr.error.substr(std::string("dependency cycle: ").size());
    REQUIRE(path.find("a") != std::string::npos);
    REQUIRE(path.find("b") != std::string::npos);
    REQUIRE(path.find("c") != std::string::npos);
    REQUIRE(path.front() == path.back());
    REQUIRE(queue.size() == 0);
}

TEST_CASE("batch accepts forward references when acyclic", "[taskqueue]") {
    TaskQueue queue;
    auto sr = queue.submitBatch({{"late", TaskPriority::Normal, 1, {"early"}},
                                 {"early", TaskPriority::Normal, 1, {}}});
    REQUIRE(sr.ok);
    REQUIRE(queue.nextTask() == "early");
    queue.complete("early", true);
    REQUIRE(queue.nextTask() == "late");
}

TEST_CASE("submitting after a dependency already failed fails immediately", "[taskqueue]") {
    TaskQueue queue;
    REQUIRE(queue.submit({"doomed", TaskPriority::Normal, 10, {}}).ok);
    REQUIRE(queue.nextTask() == "doomed");
    queue.complete("doomed", false, "oom");
    REQUIRE(queue.submit({"heir", TaskPriority::Normal, 10, {"doomed"}}).ok);
    REQUIRE(queue.state("heir") == TaskState::Failed);
    REQUIRE(queue.failureReason("heir") == "dependency_failed: doomed");
}
