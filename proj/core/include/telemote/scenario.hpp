#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "telemote/ingest.hpp"
#include "telemote/node.hpp"

namespace telemote::scenario {

struct NodeOverride {
    std::optional<std::uint32_t> sample_interval_s;
    std::optional<std::uint32_t> report_interval_s;
    std::optional<std::size_t> buffer_capacity_bytes;
};

/// One simulated deployment: N nodes reporting over loopback TCP to a spool
/// gateway whose distributor pushes files into the historian.
struct ScenarioConfig {
    int nodes = 3;
    std::uint32_t sample_interval_s = 10;
    std::uint32_t report_interval_s = 600;
    std::uint32_t duration_s = 7200;
    std::uint64_t seed = 1;
    std::int64_t epoch_unix = 946684800; // virtual t = 0 (2000-01-01)
    bool wall_clock = false;             // pin virtual time to wall time (demos)
    std::size_t buffer_capacity_bytes = 13968;

    // environment
    bool presence = true;
    bool pir_glitches = true;
    bool orientation_changes = true;
    bool calm_env = false;

    // faults
    std::vector<std::pair<std::uint32_t, std::uint32_t>> gateway_down; // virtual [from, to) s
    double channel_failure_p = 0.0;

    // services
    double poll_interval_s = 120; // virtual seconds between distributor rounds
    int batch_size = 50;
    int retention_days = 10;
    bool zero_deviation = false; // ingest with all deviations zeroed
    std::optional<ingest::Settings> ingest_settings;

    std::filesystem::path workdir; // spool/, inbox/, archive/ live here

    std::map<std::uint16_t, NodeOverride> node_overrides;

    void validate() const; // throws std::invalid_argument
};

/// Parses the line-based config format:
///   [scenario] / [env] / [faults] / [gateway] / [ingest] / [node.N]
/// sections of key=value lines. Unknown keys throw std::invalid_argument.
ScenarioConfig parse_config(std::string_view text);

struct RunReport {
    struct NodeRow {
        std::uint16_t device_id = 0;
        std::uint64_t samples = 0;
        std::uint64_t occ_events = 0;
        std::uint64_t ori_events = 0;
        std::uint64_t generated = 0;
        std::uint64_t confirmed = 0;
        std::uint64_t overflow_dropped = 0;
        std::uint64_t reports_ok = 0;
        std::uint64_t reports_failed = 0;
        std::uint64_t buffered_at_end = 0;
    };
    std::vector<NodeRow> nodes;

    std::uint64_t gw_connections = 0;
    std::uint64_t gw_rejected = 0;
    std::uint64_t gw_files_written = 0;
    std::uint64_t gw_lines_written = 0;
    std::uint64_t gw_frames_dropped = 0;
    std::uint64_t gw_records_dropped = 0;

    std::uint64_t dist_rounds = 0;
    std::uint64_t files_sent = 0;
    std::uint64_t files_failed = 0;
    std::uint64_t saturation_events = 0;
    std::uint64_t directories_purged = 0;
    std::uint64_t spool_unsent_at_end = 0;
    std::uint64_t spool_lines_unsent = 0;

    std::uint64_t ingest_files = 0;
    std::uint64_t ingest_lines = 0;
    std::uint64_t ingest_parse_errors = 0;
    std::uint64_t points_archived = 0;
    std::vector<std::pair<std::string, std::uint64_t>> archived_per_stream; // sorted by key

    bool conservation_ok = false;
    std::string conservation_detail;

    /// Deterministic text rendering (used for byte-identical repeat checks).
    std::string to_text() const;
};

/// Runs the whole chain in-process over loopback TCP. Throws on startup
/// errors (unbindable ports, unwritable directories, bad config).
RunReport run_simulation(const ScenarioConfig& config);

} // namespace telemote::scenario
