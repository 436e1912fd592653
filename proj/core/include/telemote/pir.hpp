#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "telemote/env.hpp"

namespace telemote::node {

inline constexpr VirtualNs kPirDebounceNs = 10 * kNsPerSec;

/// Interprets the raw motion-detector signal. Emits a 1 when the signal goes
/// HIGH after at least 10 s of continuous LOW, and a 0 once the signal has
/// been LOW for 10 s after a 1 was reported. Short LOW dropouts while
/// occupied therefore produce nothing. Also counts HIGH ticks (1/256 s) for
/// the occupancy-percentage reading.
class PirDebouncer {
public:
    struct Event {
        VirtualNs t;
        std::uint8_t state; // 0 | 1
    };

    explicit PirDebouncer(VirtualNs debounce_ns = kPirDebounceNs) : debounce_(debounce_ns) {}

    /// Feed one signal edge. Edges must arrive in time order (throws
    /// std::invalid_argument otherwise). Returns 0..2 events: a due vacancy
    /// timeout is folded in ahead of the edge.
    std::vector<Event> on_edge(VirtualNs t, bool level);

    /// Time at which the pending vacancy confirmation fires, if one is armed.
    std::optional<VirtualNs> pending_timeout() const {
        if (reported_ == 1 && !level_) return low_since_ + debounce_;
        return std::nullopt;
    }

    /// Fires the vacancy timeout when it is due at or before `now`.
    std::vector<Event> poll(VirtualNs now);

    /// HIGH ticks accumulated since the previous window, ending at
    /// `window_end` (half-open). Resets the window counter.
    std::uint64_t take_window_high_ticks(VirtualNs window_end);

    bool level() const { return level_; }
    std::uint8_t reported_state() const { return reported_; }

private:
    void settle_ticks(VirtualNs upto);

    VirtualNs debounce_;
    bool level_ = false;
    // LOW since "forever": a rising edge right after start qualifies.
    VirtualNs low_since_ = std::numeric_limits<VirtualNs>::min() / 4;
    std::uint8_t reported_ = 0;
    VirtualNs last_seen_ = std::numeric_limits<VirtualNs>::min() / 4;
    VirtualNs acct_from_ = 0;
    std::uint64_t high_ticks_ = 0;
};

/// occupancy_fraction = round(255 * high_ticks / (256 * sample_interval)).
std::uint8_t occupancy_fraction(std::uint64_t high_ticks, std::uint32_t sample_interval_s);

} // namespace telemote::node
