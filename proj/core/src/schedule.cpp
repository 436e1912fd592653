#include "telemote/schedule.hpp"

#include <algorithm>

namespace telemote::node {

void TaskScheduler::run(VirtualNs base, const Observer& observer) {
    std::vector<Entry> entries = std::move(entries_);
    entries_.clear();
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.info.last != b.info.last) return !a.info.last;
        return a.info.offset_ms < b.info.offset_ms;
    });
    std::uint32_t max_offset = 0;
    for (const auto& e : entries)
        if (!e.info.last) max_offset = std::max(max_offset, e.info.offset_ms);
    for (auto& e : entries) {
        if (observer) observer(e.info);
        const std::uint32_t at_ms = e.info.last ? max_offset : e.info.offset_ms;
        if (e.fn) e.fn(base + static_cast<VirtualNs>(at_ms) * kNsPerMs);
    }
}

} // namespace telemote::node
