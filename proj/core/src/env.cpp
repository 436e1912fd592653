#include "telemote/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace telemote::node {

namespace {

std::uint64_t splitmix_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double u01(std::uint64_t& state) { return (splitmix_next(state) >> 11) * 0x1.0p-53; }

double uniform(std::uint64_t& state, double lo, double hi) { return lo + (hi - lo) * u01(state); }

std::uint64_t hash3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t s = a ^ 0x51'7C'C1'B7'27'22'0A'95ull;
    s = (s ^ b) * 0x100000001B3ull;
    s = (s ^ c) * 0x100000001B3ull;
    return splitmix_next(s);
}

double hash_pm1(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return (hash3(a, b, c) >> 11) * 0x1.0p-52 - 1.0; // [-1, 1)
}

VirtualNs quantize_tick(VirtualNs t) { return (t / kPirTickNs) * kPirTickNs; }

VirtualNs seconds_ns(double s) { return static_cast<VirtualNs>(s * 1e9); }

constexpr VirtualNs kForever = std::numeric_limits<VirtualNs>::max();

} // namespace

GravityPose dominant_orientation(const std::array<double, 3>& accel_g) {
    GravityPose pose;
    pose.axis = 0;
    double best = std::abs(accel_g[0]);
    for (std::uint8_t i = 1; i < 3; ++i) {
        if (std::abs(accel_g[i]) > best) {
            best = std::abs(accel_g[i]);
            pose.axis = i;
        }
    }
    pose.sign = accel_g[pose.axis] >= 0 ? 1 : -1;
    return pose;
}

EnvProfile EnvProfile::quiet() {
    EnvProfile p;
    p.presence_enabled = false;
    p.pir_glitches = false;
    p.orientation_changes = false;
    return p;
}

EnvProfile EnvProfile::calm() {
    EnvProfile p = quiet();
    p.temp_daily_amp_c = 1.2;
    p.temp_noise_c = 0.004;
    p.rh_daily_amp_pct = 2.5;
    p.rh_noise_pct = 0.004;
    p.lux_day = 0.0;
    p.lux_night = 300.0;
    p.lux_presence_boost = 0.0;
    p.lux_noise = 0.3;
    p.accel_noise_g = 0.0004;
    p.noise_period_s = 300.0;
    return p;
}

VirtualEnvironment::VirtualEnvironment(std::uint64_t seed, EnvProfile profile)
    : seed_(seed),
      profile_(profile),
      presence_rng_(seed ^ 0xA511E9B3D3C31B2Full),
      pir_rng_(seed ^ 0x0B4E7A1C9D853F6Eull),
      pose_rng_(seed ^ 0x6C62272E07BB0142ull) {}

double VirtualEnvironment::vnoise(std::uint32_t tag, VirtualNs t) const {
    const double x = static_cast<double>(t) / (profile_.noise_period_s * 1e9);
    const double kf = std::floor(x);
    const auto k = static_cast<std::int64_t>(kf);
    const double f = x - kf;
    const double a = hash_pm1(seed_, tag, static_cast<std::uint64_t>(k));
    const double b = hash_pm1(seed_, tag, static_cast<std::uint64_t>(k + 1));
    const double s = f * f * (3.0 - 2.0 * f);
    return a + (b - a) * s;
}

double VirtualEnvironment::temperature_c(VirtualNs t) const {
    const double tod = std::fmod(static_cast<double>(t) / 1e9, 86400.0);
    const double diurnal = std::sin(2.0 * M_PI * (tod - 32400.0) / 86400.0);
    return profile_.temp_base_c + profile_.temp_daily_amp_c * diurnal +
           profile_.temp_noise_c * vnoise(1, t);
}

double VirtualEnvironment::humidity_rh(VirtualNs t) const {
    const double tod = std::fmod(static_cast<double>(t) / 1e9, 86400.0);
    const double diurnal = std::sin(2.0 * M_PI * (tod - 32400.0) / 86400.0);
    const double rh = profile_.rh_base_pct - profile_.rh_daily_amp_pct * diurnal +
                      profile_.rh_noise_pct * vnoise(2, t);
    return std::clamp(rh, 2.0, 98.0);
}

double VirtualEnvironment::illuminance_lux(VirtualNs t) const {
    const double tod = std::fmod(static_cast<double>(t) / 1e9, 86400.0);
    double daylight = 0.0;
    if (tod > 21600.0 && tod < 64800.0)
        daylight = std::sin(M_PI * (tod - 21600.0) / 43200.0);
    double lux = profile_.lux_night + profile_.lux_day * daylight +
                 (presence(t) ? profile_.lux_presence_boost : 0.0) +
                 profile_.lux_noise * vnoise(3, t);
    return std::clamp(lux, 0.0, 65000.0);
}

std::array<double, 3> VirtualEnvironment::acceleration_g(VirtualNs t) const {
    const GravityPose pose = pose_at(t);
    std::array<double, 3> a{};
    a[pose.axis] = pose.sign;
    for (std::uint32_t i = 0; i < 3; ++i)
        a[i] += profile_.accel_noise_g * vnoise(10 + i, t);
    return a;
}

void VirtualEnvironment::ensure_presence(VirtualNs t) const {
    if (!profile_.presence_enabled) return;
    while (presence_toggles_.empty() || presence_toggles_.back() <= t) {
        const bool next_is_occupied = presence_toggles_.size() % 2 == 0;
        const double dur = next_is_occupied
                               ? uniform(presence_rng_, profile_.vacant_min_s, profile_.vacant_max_s)
                               : uniform(presence_rng_, profile_.occupied_min_s,
                                         profile_.occupied_max_s);
        const VirtualNs prev = presence_toggles_.empty() ? 0 : presence_toggles_.back();
        // toggles live on the 1/256 s grid: occupancy is defined in PIR ticks
        const VirtualNs step = std::max<VirtualNs>(quantize_tick(seconds_ns(dur)), kPirTickNs);
        presence_toggles_.push_back(prev + step);
    }
}

bool VirtualEnvironment::presence(VirtualNs t) const {
    if (!profile_.presence_enabled) return false;
    ensure_presence(t);
    const auto it = std::upper_bound(presence_toggles_.begin(), presence_toggles_.end(), t);
    return (it - presence_toggles_.begin()) % 2 == 1;
}

void VirtualEnvironment::ensure_pir(VirtualNs t) const {
    if (!profile_.presence_enabled) {
        pir_gen_until_ = kForever;
        return;
    }
    auto push_edge = [this](VirtualNs at, bool level) {
        VirtualNs tq = quantize_tick(std::max<VirtualNs>(at, 0));
        if (!pir_edges_.empty()) {
            if (level == pir_edges_.back().level) return;
            if (tq <= pir_edges_.back().t) tq = pir_edges_.back().t + kPirTickNs;
        }
        pir_edges_.push_back({tq, level});
    };
    while (pir_gen_until_ <= t && pir_gen_until_ != kForever) {
        const std::size_t i = pir_presence_cursor_++;
        ensure_presence(pir_gen_until_ + kPirTickNs);
        while (presence_toggles_.size() <= i) ensure_presence(presence_toggles_.back() + 1);
        const VirtualNs a = i == 0 ? 0 : presence_toggles_[i - 1];
        const VirtualNs b = presence_toggles_[i];
        const bool occupied = i % 2 == 1;
        if (occupied) {
            push_edge(a, true);
            if (profile_.pir_glitches) {
                VirtualNs g = a + seconds_ns(uniform(pir_rng_, profile_.glitch_gap_min_s,
                                                     profile_.glitch_gap_max_s));
                while (true) {
                    const VirtualNs len = seconds_ns(
                        uniform(pir_rng_, profile_.glitch_len_min_s, profile_.glitch_len_max_s));
                    if (g + len > b - kNsPerSec) break;
                    push_edge(g, false);
                    push_edge(g + len, true);
                    g += len + seconds_ns(uniform(pir_rng_, profile_.glitch_gap_min_s,
                                                  profile_.glitch_gap_max_s));
                }
            }
            push_edge(b, false);
        }
        pir_gen_until_ = b;
    }
}

bool VirtualEnvironment::pir_level_at(VirtualNs t) const {
    ensure_pir(t);
    auto it = std::upper_bound(pir_edges_.begin(), pir_edges_.end(), t,
                               [](VirtualNs v, const PirEdge& e) { return v < e.t; });
    if (it == pir_edges_.begin()) return false;
    return std::prev(it)->level;
}

std::optional<PirEdge> VirtualEnvironment::next_pir_edge_after(VirtualNs t) const {
    ensure_pir(t);
    auto past_t = [&] {
        return std::upper_bound(pir_edges_.begin(), pir_edges_.end(), t,
                                [](VirtualNs v, const PirEdge& e) { return v < e.t; });
    };
    while (past_t() == pir_edges_.end() && pir_gen_until_ != kForever)
        ensure_pir(pir_gen_until_);
    auto it = past_t();
    if (it == pir_edges_.end()) return std::nullopt;
    return *it;
}

std::uint64_t VirtualEnvironment::pir_high_ticks_in(VirtualNs t0, VirtualNs t1) const {
    if (t1 <= t0) return 0;
    ensure_pir(t1);
    std::uint64_t ticks = 0;
    bool level = false;
    VirtualNs seg_start = 0;
    auto account = [&](VirtualNs seg_end) {
        if (!level) return;
        const VirtualNs lo = std::max(seg_start, t0);
        const VirtualNs hi = std::min(seg_end, t1);
        if (hi > lo) ticks += static_cast<std::uint64_t>(tick_of(hi) - tick_of(lo));
    };
    for (const auto& e : pir_edges_) {
        if (e.t >= t1) break;
        account(e.t);
        level = e.level;
        seg_start = e.t;
    }
    account(t1);
    return ticks;
}

void VirtualEnvironment::ensure_orientation(VirtualNs t) const {
    if (!profile_.orientation_changes) {
        pose_gen_until_ = kForever;
        return;
    }
    while (pose_gen_until_ <= t && pose_gen_until_ != kForever) {
        const VirtualNs gap = seconds_ns(
            uniform(pose_rng_, profile_.orientation_gap_min_s, profile_.orientation_gap_max_s));
        const VirtualNs at = ((pose_gen_until_ + gap) / kNsPerMs) * kNsPerMs;
        const GravityPose current = pose_changes_.empty() ? GravityPose{} : pose_changes_.back().second;
        GravityPose next = current;
        while (next == current) {
            next.axis = static_cast<std::uint8_t>(splitmix_next(pose_rng_) % 3);
            next.sign = (splitmix_next(pose_rng_) & 1) ? 1 : -1;
        }
        pose_changes_.emplace_back(at, next);
        pose_gen_until_ = at;
    }
}

std::optional<VirtualNs> VirtualEnvironment::next_orientation_change_after(VirtualNs t) const {
    ensure_orientation(t);
    auto past_t = [&] {
        return std::upper_bound(
            pose_changes_.begin(), pose_changes_.end(), t,
            [](VirtualNs v, const std::pair<VirtualNs, GravityPose>& e) { return v < e.first; });
    };
    while (past_t() == pose_changes_.end() && pose_gen_until_ != kForever)
        ensure_orientation(pose_gen_until_);
    auto it = past_t();
    if (it == pose_changes_.end()) return std::nullopt;
    return it->first;
}

GravityPose VirtualEnvironment::pose_at(VirtualNs t) const {
    ensure_orientation(t);
    auto it = std::upper_bound(
        pose_changes_.begin(), pose_changes_.end(), t,
        [](VirtualNs v, const std::pair<VirtualNs, GravityPose>& e) { return v < e.first; });
    if (it == pose_changes_.begin()) return GravityPose{};
    return std::prev(it)->second;
}

} // namespace telemote::node
