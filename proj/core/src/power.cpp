#include "telemote/power.hpp"

#include <algorithm>
#include <cstdio>

namespace telemote::power {

BatterySpec BatterySpec::standard() {
    return BatterySpec{9.0, {{100.0, 8.00}, {168.0, 8.03}}};
}

void BatterySpec::validate() const {
    if (derating_anchors.empty()) throw std::invalid_argument("derating anchor list is empty");
    double prev = -1;
    for (const auto& [current, capacity] : derating_anchors) {
        if (current <= prev) throw std::invalid_argument("derating anchors not sorted by current");
        if (capacity > nominal_capacity_Ah)
            throw std::invalid_argument("anchor capacity exceeds nominal");
        prev = current;
    }
}

CurrentBreakdown avg_current(const PowerProfile& profile, double sample_interval_s,
                             double report_interval_s) {
    if (sample_interval_s < 1.0 || report_interval_s < 1.0)
        throw std::invalid_argument("intervals must be at least 1 s");
    if (report_interval_s < sample_interval_s)
        throw std::invalid_argument("report interval must be >= sample interval");
    CurrentBreakdown b;
    b.comms_uA = profile.comms_charge_per_report_uAs / report_interval_s;
    b.sensing_uA = profile.pir_static_uA + profile.sensing_charge_per_sample_uAs / sample_interval_s;
    b.processing_uA = profile.processing_charge_per_sample_uAs / sample_interval_s;
    b.sleep_uA = profile.sleep_floor_uA;
    b.total_uA = b.comms_uA + b.sensing_uA + b.processing_uA + b.sleep_uA;
    return b;
}

double effective_capacity_Ah(const BatterySpec& battery, double avg_current_uA) {
    battery.validate();
    const auto& anchors = battery.derating_anchors;
    double capacity;
    if (avg_current_uA <= anchors.front().first) {
        capacity = anchors.front().second;
    } else if (avg_current_uA >= anchors.back().first) {
        capacity = anchors.back().second;
    } else {
        capacity = anchors.back().second;
        for (std::size_t i = 1; i < anchors.size(); ++i) {
            if (avg_current_uA <= anchors[i].first) {
                const auto& [x0, y0] = anchors[i - 1];
                const auto& [x1, y1] = anchors[i];
                capacity = y0 + (y1 - y0) * (avg_current_uA - x0) / (x1 - x0);
                break;
            }
        }
    }
    double min_capacity = anchors.front().second;
    for (const auto& [_, c] : anchors) min_capacity = std::min(min_capacity, c);
    return std::clamp(capacity, min_capacity, battery.nominal_capacity_Ah);
}

Lifetime lifetime_years(const PowerProfile& profile, const BatterySpec& battery,
                        double sample_interval_s, double report_interval_s) {
    Lifetime lt;
    lt.breakdown = avg_current(profile, sample_interval_s, report_interval_s);
    const double capacity_Ah = effective_capacity_Ah(battery, lt.breakdown.total_uA);
    const double hours = capacity_Ah / (lt.breakdown.total_uA * 1e-6);
    lt.years = hours / kHoursPerYear;
    return lt;
}

Surface lifetime_surface(const PowerProfile& profile, const BatterySpec& battery,
                         const std::vector<double>& sample_intervals_s,
                         const std::vector<double>& report_intervals_s) {
    if (sample_intervals_s.empty() || report_intervals_s.empty())
        throw std::invalid_argument("surface grid is empty");
    Surface s;
    s.sample_intervals_s = sample_intervals_s;
    s.report_intervals_s = report_intervals_s;
    s.years.reserve(sample_intervals_s.size() * report_intervals_s.size());
    for (double sample : sample_intervals_s) {
        for (double report : report_intervals_s) {
            if (report < sample) {
                s.years.emplace_back(std::nullopt);
            } else {
                s.years.emplace_back(lifetime_years(profile, battery, sample, report).years);
            }
        }
    }
    return s;
}

std::string surface_csv(const Surface& surface) {
    std::string out = "sample_s\\report_s";
    char buf[32];
    for (double r : surface.report_intervals_s) {
        std::snprintf(buf, sizeof buf, ",%g", r);
        out += buf;
    }
    out += '\n';
    for (std::size_t i = 0; i < surface.sample_intervals_s.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%g", surface.sample_intervals_s[i]);
        out += buf;
        for (std::size_t j = 0; j < surface.report_intervals_s.size(); ++j) {
            const auto& cell = surface.at(i, j);
            if (cell)
                std::snprintf(buf, sizeof buf, ",%.3f", *cell);
            else
                std::snprintf(buf, sizeof buf, ",");
            out += buf;
        }
        out += '\n';
    }
    return out;
}

} // namespace telemote::power
