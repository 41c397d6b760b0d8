#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace hivemind {

// Priority classes in dispatch order; lower value dispatches first.
enum class TaskPriority { Critical = 0, High = 1, Normal = 2, Low = 3 };

inline const char* taskPriorityName(TaskPriority p) {
    switch (p) {
    case TaskPriority::Critical:
        return "critical";
    case TaskPriority::High:
        return "high";
    case TaskPriority::Normal:
        return "normal";
    default:
        return "low";
    }
}

inline std::optional<TaskPriority> taskPriorityFromName(const std::string& name) {
    if (name == "critical")
        return TaskPriority::Critical;
    if (name == "high")
        return TaskPriority::High;
    if (name == "normal")
        return TaskPriority::Normal;
    if (name == "low")
        return TaskPriority::Low;
    return std::nullopt;
}

enum class TaskState { Pending, Ready, Running, Done, Failed };

inline const char* taskStateName(TaskState s) {
    switch (s) {
    case TaskState::Pending:
        return "pending";
    case TaskState::Ready:
        return "ready";
    case TaskState::Running:
        return "running";
    case TaskState::Done:
        return "done";
    default:
        return "failed";
    }
}

struct TaskSpec {
    std::string id;
    TaskPriority priority = TaskPriority::Normal;
    long estTokens = 0;
    std::vector<std::string> deps;
};

// ──────────────────────────────────────────────────────────────────────────────
// TaskQueue: dependency-aware priority scheduler for harness-submitted work.
//
// Dispatch order among Ready tasks: priority class first, then smallest
// estimated token cost, then submission order. A task becomes Ready when all
// dependencies are Done; a failed dependency fails every transitive dependent
// with reason "dependency_failed".
//
// submit() requires dependencies to exist already, so a cycle can never form
// through it. submitBatch() accepts forward references within the batch and
// rejects the whole batch if the combined graph would contain a cycle,
// naming the cycle in the error.
// ──────────────────────────────────────────────────────────────────────────────
class TaskQueue {
public:
    struct SubmitResult {
        bool ok = true;
        std::string error;
    };

    SubmitResult submit(const TaskSpec& spec) {
        std::lock_guard<std::mutex> lock(mu_);
        if (spec.id.empty())
            return {false, "task id must not be empty"};
        if (tasks_.count(spec.id))
            return {false, "duplicate task id: " + spec.id};
        for (const auto& dep : spec.deps)
            if (!tasks_.count(dep))
                return {false, "unknown dependency: " + dep + " (required by " + spec.id + ")"};
        insertLocked(spec);
        return {};
    }

    // All-or-nothing: on any validation failure (including a dependency cycle)
    // no task from the batch is admitted.
    SubmitResult submitBatch(const std::vector<TaskSpec>& batch) {
        std::lock_guard<std::mutex> lock(mu_);
        std::set<std::string> batchIds;
        for (const auto& spec : batch) {
            if (spec.id.empty())
                return {false, "task id must not be empty"};
            if (tasks_.count(spec.id) || !batchIds.insert(spec.id).second)
                return {false, "duplicate task id: " + spec.id};
        }
        for (const auto& spec : batch)
            for (const auto& dep : spec.deps)
                if (!tasks_.count(dep) && !batchIds.count(dep))
                    return {false, "unknown dependency: " + dep + " (required by " + spec.id + ")"};
        if (auto cycle = findCycleLocked(batch))
            return {false, "dependency cycle: " + *cycle};
        // Create every task before wiring any dependency so forward references
        // within the batch resolve; seq still follows batch order.
        for (const auto& spec : batch)
            createLocked(spec);
        for (const auto& spec : batch)
            wireLocked(spec);
        return {};
    }

    // Pops the best Ready task and marks it Running.
    std::optional<std::string> nextTask() {
        std::lock_guard<std::mutex> lock(mu_);
        if (ready_.empty())
            return std::nullopt;
        auto key = *ready_.begin();
        ready_.erase(ready_.begin());
        Task& t = tasks_.at(key.id);
        t.state = TaskState::Running;
        return key.id;
    }

    // Completion of a Running task. Success promotes dependents whose last
    // dependency this was; failure cascades to all transitive dependents.
    void complete(const std::string& id, bool success, const std::string& reason = "") {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = tasks_.find(id);
        if (it == tasks_.end() || it->second.state != TaskState::Running)
            return;
        if (success) {
            it->second.state = TaskState::Done;
            for (const auto& depId : it->second.dependents) {
                Task& d = tasks_.at(depId);
                if (d.state != TaskState::Pending)
                    continue;
                if (--d.unmetDeps == 0)
                    promoteLocked(depId, d);
            }
        } else {
            failLocked(id, reason.empty() ? "failed" : reason);
        }
    }

    TaskState state(const std::string& id) const {
        std::lock_guard<std::mutex> lock(mu_);
        return tasks_.at(id).state;
    }

    std::string failureReason(const std::string& id) const {
        std::lock_guard<std::mutex> lock(mu_);
        return tasks_.at(id).failureReason;
    }

    size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return tasks_.size();
    }

    size_t readyCount() const {
        std::lock_guard<std::mutex> lock(mu_);
        return ready_.size();
    }

    // True when no task could ever be dispatched again.
    bool drained() const {
        std::lock_guard<std::mutex> lock(mu_);
        for (const auto& [id, t] : tasks_)
            if (t.state == TaskState::Ready || t.state == TaskState::Running ||
                t.state == TaskState::Pending)
                return false;
        return true;
    }

private:
    struct ReadyKey {
        TaskPriority priority;
        long estTokens;
        uint64_t seq;
        std::string id;

        bool operator<(const ReadyKey& o) const {
            if (priority != o.priority)
                return priority < o.priority;
            if (estTokens != o.estTokens)
                return estTokens < o.estTokens;
            return seq < o.seq;
        }
    };

    struct Task {
        TaskSpec spec;
        TaskState state = TaskState::Pending;
        uint64_t seq = 0;
        size_t unmetDeps = 0;
        std::vector<std::string> dependents;
        std::string failureReason;
    };

    void insertLocked(const TaskSpec& spec) {
        createLocked(spec);
        wireLocked(spec);
    }

    void createLocked(const TaskSpec& spec) {
        Task t;
        t.spec = spec;
        t.seq = nextSeq_++;
        tasks_.emplace(spec.id, std::move(t));
    }

    // Requires every dependency to exist already (createLocked ran for the
    // whole batch first). A dependency that failed in the meantime fails the
    // new task on the spot, matching the cascade a live failure would cause.
    void wireLocked(const TaskSpec& spec) {
        Task& stored = tasks_.at(spec.id);
        for (const auto& dep : spec.deps) {
            Task& d = tasks_.at(dep);
            d.dependents.push_back(spec.id);
            if (d.state == TaskState::Failed) {
                failLocked(spec.id, "dependency_failed: " + dep);
                return;
            }
            if (d.state != TaskState::Done)
                ++stored.unmetDeps;
        }
        if (stored.state == TaskState::Pending && stored.unmetDeps == 0)
            promoteLocked(spec.id, stored);
    }

    void promoteLocked(const std::string& id, Task& t) {
        t.state = TaskState::Ready;
        ready_.insert({t.spec.priority, t.spec.estTokens, t.seq, id});
    }

    // Depth-first cascade; removes any affected task from the ready set.
    void failLocked(const std::string& id, const std::string& reason) {
        Task& t = tasks_.at(id);
        if (t.state == TaskState::Done || t.state == TaskState::Failed)
            return;
        if (t.state == TaskState::Ready)
            ready_.erase({t.spec.priority, t.spec.estTokens, t.seq, id});
        t.state = TaskState::Failed;
        t.failureReason = reason;
        for (const auto& depId : t.dependents)
            failLocked(depId, "dependency_failed: " + id);
    }

    // Kahn's algorithm over existing + batch tasks restricted to the batch:
    // existing tasks cannot gain new dependencies, so any new cycle lies
    // entirely within the batch.
    std::optional<std::string> findCycleLocked(const std::vector<TaskSpec>& batch) const {
        std::map<std::string, std::vector<std::string>> edges; // dep -> dependents
        std::map<std::string, size_t> indeg;
        for (const auto& spec : batch)
            indeg[spec.id] = 0;
        for (const auto& spec : batch) {
            for (const auto& dep : spec.deps) {
                if (!indeg.count(dep))
                    continue; // existing task, acyclic by construction
                edges[dep].push_back(spec.id);
                ++indeg[spec.id];
            }
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
            auto it = edges.find(id);
            if (it == edges.end())
                continue;
            for (const auto& next : it->second)
                if (--indeg[next] == 0)
                    frontier.push_back(next);
        }
        if (visited == indeg.size())
            return std::nullopt;
        // Walk the residual graph to render one concrete cycle.
        std::string start;
        for (const auto& [id, deg] : indeg)
            if (deg > 0) {
                start = id;
                break;
            }
        std::map<std::string, std::vector<std::string>> depsOf;
        for (const auto& spec : batch)
            for (const auto& dep : spec.deps)
                if (indeg.count(dep) && indeg.at(dep) > 0)
                    depsOf[spec.id].push_back(dep);
        std::vector<std::string> path{start};
        std::set<std::string> seen{start};
        std::string cur = start;
        for (;;) {
            const auto& ds = depsOf[cur];
            std::string next;
            for (const auto& d : ds)
                if (indeg.count(d) && indeg.at(d) > 0) {
                    next = d;
                    break;
                }
            if (next.empty())
                break;
            if (seen.count(next)) {
                std::string text = next;
                for (auto it2 = path.rbegin(); it2 != path.rend(); ++it2) {
                    text += " -> " + *it2;
                    if (*it2 == next)
                        break;
                }
                return text;
            }
            seen.insert(next);
            path.push_back(next);
            cur = next;
        }
        return std::string("(unrenderable cycle)");
    }

    mutable std::mutex mu_;
    std::map<std::string, Task> tasks_;
    std::set<ReadyKey> ready_;
    uint64_t nextSeq_ = 0;
};

} // namespace hivemind
