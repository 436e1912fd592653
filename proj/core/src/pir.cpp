#include "telemote/pir.hpp"

#include <stdexcept>

namespace telemote::node {

void PirDebouncer::settle_ticks(VirtualNs upto) {
    if (upto <= acct_from_) return;
    if (level_) high_ticks_ += static_cast<std::uint64_t>(tick_of(upto) - tick_of(acct_from_));
    acct_from_ = upto;
}

std::vector<PirDebouncer::Event> PirDebouncer::poll(VirtualNs now) {
    std::vector<Event> events;
    if (auto due = pending_timeout(); due && *due <= now) {
        events.push_back({*due, 0});
        reported_ = 0;
    }
    return events;
}

std::vector<PirDebouncer::Event> PirDebouncer::on_edge(VirtualNs t, bool level) {
    if (t < last_seen_) throw std::invalid_argument("PIR edge out of time order");
    std::vector<Event> events = poll(t);
    last_seen_ = t;
    if (level == level_) return events;
    settle_ticks(t);
    if (level) {
        if (reported_ == 0 && t - low_since_ >= debounce_) {
            events.push_back({t, 1});
            reported_ = 1;
        }
    } else {
        low_since_ = t;
    }
    level_ = level;
    return events;
}

std::uint64_t PirDebouncer::take_window_high_ticks(VirtualNs window_end) {
    settle_ticks(window_end);
    const std::uint64_t ticks = high_ticks_;
    high_ticks_ = 0;
    acct_from_ = window_end;
    return ticks;
}

std::uint8_t occupancy_fraction(std::uint64_t high_ticks, std::uint32_t sample_interval_s) {
    const std::uint64_t den = 256ull * sample_interval_s;
    if (den == 0) return 0;
    const std::uint64_t num = 255ull * high_ticks;
    const std::uint64_t rounded = (2 * num + den) / (2 * den); // round half up
    return static_cast<std::uint8_t>(rounded > 255 ? 255 : rounded);
}

} // namespace telemote::node
