#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace telemote::node {

/// Virtual time in integer nanoseconds since the simulation epoch.
using VirtualNs = std::int64_t;

inline constexpr VirtualNs kNsPerSec = 1'000'000'000;
inline constexpr VirtualNs kNsPerMs = 1'000'000;

/// The motion detector is read on a 1/256 s grid.
inline constexpr VirtualNs kPirTickNs = kNsPerSec / 256; // 3,906,250 ns exactly

inline constexpr std::int64_t tick_of(VirtualNs t) { return t / kPirTickNs; }

struct GravityPose {
    std::uint8_t axis = 2; // 0=x, 1=y, 2=z
    std::int8_t sign = 1;  // +1 | -1
    bool operator==(const GravityPose&) const = default;
};

/// Largest |component| wins; exact ties resolve x before y before z.
GravityPose dominant_orientation(const std::array<double, 3>& accel_g);

struct EnvProfile {
    // continuous channels
    double temp_base_c = 22.0;
    double temp_daily_amp_c = 2.0;
    double temp_noise_c = 0.05;
    double rh_base_pct = 45.0;
    double rh_daily_amp_pct = 6.0;
    double rh_noise_pct = 0.15;
    double lux_day = 420.0;
    double lux_night = 1.0;
    double lux_presence_boost = 180.0;
    double lux_noise = 2.0;
    double accel_noise_g = 0.003;
    double noise_period_s = 90.0;

    // presence process (alternating vacant/occupied intervals)
    bool presence_enabled = true;
    double vacant_min_s = 120, vacant_max_s = 2400;
    double occupied_min_s = 60, occupied_max_s = 1800;

    // motion-detector signal shaping
    bool pir_glitches = true; // short LOW dropouts while occupied
    double glitch_gap_min_s = 15, glitch_gap_max_s = 120;
    double glitch_len_min_s = 0.5, glitch_len_max_s = 8.0;

    // re-orientation process (device picked up and moved)
    bool orientation_changes = true;
    double orientation_gap_min_s = 900, orientation_gap_max_s = 4000;

    /// Nothing moves: no presence, no orientation changes. Clean FSM traces.
    static EnvProfile quiet();

    /// Very slow drift, sub-quantum noise on every channel; used for the
    /// buffer-compression experiment where consecutive readings should differ
    /// in only a couple of encoded bytes.
    static EnvProfile calm();
};

struct PirEdge {
    VirtualNs t; // tick-aligned
    bool level;  // signal level after the edge
};

/// Deterministic seeded signal source for one node. The same seed yields the
/// same signal values at the same query times regardless of query order.
class VirtualEnvironment {
public:
    explicit VirtualEnvironment(std::uint64_t seed, EnvProfile profile = {});

    const EnvProfile& profile() const { return profile_; }
    std::uint64_t seed() const { return seed_; }

    double temperature_c(VirtualNs t) const;
    double humidity_rh(VirtualNs t) const;
    double illuminance_lux(VirtualNs t) const;
    std::array<double, 3> acceleration_g(VirtualNs t) const;

    /// Ground-truth presence (no sensor artifacts).
    bool presence(VirtualNs t) const;

    /// Motion-detector signal: presence shaped by intermittent LOW dropouts.
    bool pir_level_at(VirtualNs t) const;
    std::optional<PirEdge> next_pir_edge_after(VirtualNs t) const;

    /// HIGH ticks of the PIR signal in [t0, t1), 1/256 s grid. Independent
    /// accounting used to cross-check the firmware's tick counters.
    std::uint64_t pir_high_ticks_in(VirtualNs t0, VirtualNs t1) const;

    std::optional<VirtualNs> next_orientation_change_after(VirtualNs t) const;
    GravityPose pose_at(VirtualNs t) const;

private:
    double vnoise(std::uint32_t tag, VirtualNs t) const;
    void ensure_presence(VirtualNs t) const;
    void ensure_pir(VirtualNs t) const;
    void ensure_orientation(VirtualNs t) const;

    std::uint64_t seed_;
    EnvProfile profile_;

    // lazily extended timelines (generation order is fixed, so query order
    // cannot change the signals)
    mutable std::vector<VirtualNs> presence_toggles_; // alternating, first = becomes occupied
    mutable std::uint64_t presence_rng_;
    mutable std::vector<PirEdge> pir_edges_;
    mutable std::uint64_t pir_rng_;
    mutable std::size_t pir_presence_cursor_ = 0; // presence intervals consumed
    mutable VirtualNs pir_gen_until_ = 0;
    mutable std::vector<std::pair<VirtualNs, GravityPose>> pose_changes_;
    mutable std::uint64_t pose_rng_;
    mutable VirtualNs pose_gen_until_ = 0;
};

} // namespace telemote::node
