#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "telemote/env.hpp"

namespace telemote::node {

/// One-shot sampling-pass scheduler. Tasks run in ascending offset order;
/// equal offsets run in the order they were queued; LAST tasks run after all
/// others. Offsets are virtual: the pass executes instantaneously in
/// simulation time, with each task seeing its own nominal instant.
class TaskScheduler {
public:
    struct TaskInfo {
        std::uint32_t offset_ms = 0;
        bool last = false;
        std::string component;
        std::string action;
    };

    using Fn = std::function<void(VirtualNs run_at)>;
    using Observer = std::function<void(const TaskInfo&)>;

    void schedule(std::uint32_t offset_ms, std::string component, std::string action, Fn fn) {
        entries_.push_back({{offset_ms, false, std::move(component), std::move(action)},
                            std::move(fn)});
    }

    void schedule_last(std::string component, std::string action, Fn fn) {
        entries_.push_back({{0, true, std::move(component), std::move(action)}, std::move(fn)});
    }

    /// Runs and clears the queue. `base` is the virtual instant of offset 0.
    void run(VirtualNs base, const Observer& observer = {});

private:
    struct Entry {
        TaskInfo info;
        Fn fn;
    };
    std::vector<Entry> entries_;
};

} // namespace telemote::node
