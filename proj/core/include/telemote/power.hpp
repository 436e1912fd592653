#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace telemote::power {

/// Per-component charge constants. The defaults are calibrated so that a
/// 10 s sample / 60 s report configuration draws 56 uA for communication,
/// 57 uA for sensing, 47 uA for processing and 8 uA of sleep floor
/// (168 uA total). The always-on motion detector is accounted under sensing.
struct PowerProfile {
    double sleep_floor_uA = 8.0;
    double pir_static_uA = 46.0;
    double sensing_charge_per_sample_uAs = 110.0;
    double processing_charge_per_sample_uAs = 470.0;
    double comms_charge_per_report_uAs = 3360.0;
};

/// Battery nameplate plus measured derating anchors (avg current -> usable
/// capacity). Anchors must be sorted by current, capacities <= nominal.
struct BatterySpec {
    double nominal_capacity_Ah = 9.0;
    std::vector<std::pair<double, double>> derating_anchors; // (uA, Ah)

    /// The 3.7 V lithium-thionyl-chloride cell used by the reference node:
    /// 9 Ah nominal, 8.00 Ah at 100 uA, 8.03 Ah at 168 uA.
    static BatterySpec standard();

    void validate() const; // throws std::invalid_argument
};

struct CurrentBreakdown {
    double comms_uA = 0;
    double sensing_uA = 0;
    double processing_uA = 0;
    double sleep_uA = 0;
    double total_uA = 0;
};

/// Average current as a function of the two duty-cycle intervals.
/// Throws std::invalid_argument for intervals < 1 s or report < sample.
CurrentBreakdown avg_current(const PowerProfile& profile, double sample_interval_s,
                             double report_interval_s);

/// Piecewise-linear interpolation through the derating anchors, clamped to
/// [lowest anchor capacity, nominal]; held flat beyond the ends of the list.
double effective_capacity_Ah(const BatterySpec& battery, double avg_current_uA);

inline constexpr double kHoursPerYear = 8766.0; // Julian year

struct Lifetime {
    double years = 0;
    CurrentBreakdown breakdown;
};

Lifetime lifetime_years(const PowerProfile& profile, const BatterySpec& battery,
                        double sample_interval_s, double report_interval_s);

/// Lifetime over a sample x report grid. Cells with report < sample are
/// infeasible and left empty.
struct Surface {
    std::vector<double> sample_intervals_s; // rows
    std::vector<double> report_intervals_s; // columns
    std::vector<std::optional<double>> years; // row-major

    const std::optional<double>& at(std::size_t row, std::size_t col) const {
        return years[row * report_intervals_s.size() + col];
    }
};

Surface lifetime_surface(const PowerProfile& profile, const BatterySpec& battery,
                         const std::vector<double>& sample_intervals_s,
                         const std::vector<double>& report_intervals_s);

/// Comma-separated export: first row lists report intervals, first column
/// sample intervals, cells are years with 3 decimals (empty when infeasible).
std::string surface_csv(const Surface& surface);

} // namespace telemote::power
