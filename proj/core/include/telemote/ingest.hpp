#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "telemote/net.hpp"

namespace telemote::ingest {

// ---- flat-file parsing -----------------------------------------------------

struct SampleRecord {
    std::uint16_t device_id;
    double timestamp;
    double temperature_c;
    double humidity_pct;
    double lux;
    double accel_g[3];
    double occupancy_pct;
};

struct OccRecord {
    std::uint16_t device_id;
    double timestamp;
    int state; // 0 | 1
};

struct OriRecord {
    std::uint16_t device_id;
    double timestamp;
    int axis;  // 0=x, 1=y, 2=z
    int sign;  // +1 | -1
};

using LineRecord = std::variant<SampleRecord, OccRecord, OriRecord>;

struct ParseError {
    int line_no; // 1-based
    std::string line;
    std::string reason;
};

struct ParsedFile {
    std::vector<LineRecord> records;
    std::vector<ParseError> errors;
};

/// Parses the multi-line-type flat format. Malformed lines are collected with
/// their line numbers; parsing never aborts the file.
ParsedFile parse_flat_file(std::string_view text);

// ---- per-stream compression ------------------------------------------------

struct StreamSettings {
    double exc_dev = 0;      // exception deadband (engineering units); 0 = off
    double exc_max_s = 3600; // heartbeat forcing a pass
    double comp_dev = 0;     // swinging-door corridor half-width; 0 = archive all
    double comp_max_s = 3600;
};

struct Settings {
    std::map<std::string, StreamSettings> per_stream;

    const StreamSettings& for_stream(const std::string& name) const;

    /// Deadband at or below each sensor's stated accuracy; events always 0.
    static Settings defaults();
    /// Everything passes, everything archives (conservation checks).
    static Settings zero_deviation();

    /// Line-based "stream.param=value" text, e.g. "temp.exc_dev=0.05".
    /// Unknown keys throw std::invalid_argument.
    static Settings parse(std::string_view text);
    std::string serialize() const;
};

struct Point {
    double t;
    double v;

    bool operator==(const Point&) const = default;
};

/// Deadband pre-filter: a point passes when it moved more than exc_dev from
/// the last passed value, the heartbeat expired, or nothing passed yet.
/// Re-sent data is absorbed: stale and duplicate timestamps drop silently,
/// same-timestamp conflicts drop and are counted.
class ExceptionFilter {
public:
    enum class Verdict { Pass, DropDeadband, DropStale, DropDuplicate, DropConflict };

    Verdict offer(const Point& p, const StreamSettings& s);
    void prime(const Point& last_passed) { last_ = last_passed; }

private:
    std::optional<Point> last_;
};

/// Swinging-door compression. Keeps a slope corridor from the last archived
/// point, tightened by every incoming point's +-comp_dev window; a point whose
/// exact slope leaves the corridor (or that overruns comp_max_s) archives the
/// held snapshot and restarts the corridor. Guarantees that linear
/// interpolation between archived points reproduces every accepted point
/// within comp_dev. comp_dev = 0 disables compression (every point archives).
class SwingingDoor {
public:
    /// Points to archive now, in order. Non-monotonic timestamps are rejected
    /// and counted.
    std::vector<Point> offer(const Point& p, const StreamSettings& s);

    /// Archives the held snapshot (stream close).
    std::optional<Point> flush();

    void prime(const Point& last_archived) { archived_ = last_archived; }

    std::uint64_t rejected() const { return rejected_; }

private:
    std::optional<Point> archived_; // A
    std::optional<Point> held_;     // H
    double slope_min_ = 0, slope_max_ = 0;
    std::uint64_t rejected_ = 0;
};

// ---- archive ----------------------------------------------------------------

/// Append-only per-stream point log: 16-byte little-endian records
/// (timestamp f64, value f64). A torn tail (partial record) is dropped on
/// open; whole records are never touched.
class StreamArchive {
public:
    explicit StreamArchive(std::filesystem::path file); // loads existing points
    ~StreamArchive();
    StreamArchive(StreamArchive&&) = delete;

    /// Throws std::invalid_argument on a non-increasing timestamp.
    void append(const Point& p);
    void flush(); // fflush + fsync

    const std::vector<Point>& points() const { return points_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::FILE* file_ = nullptr;
    std::vector<Point> points_;
};

// ---- historian ---------------------------------------------------------------

struct StreamKey {
    std::uint16_t device_id;
    std::string stream;

    auto operator<=>(const StreamKey&) const = default;
    std::string display() const { return std::to_string(device_id) + ":" + stream; }
};

class UnknownStream : public std::runtime_error {
public:
    explicit UnknownStream(std::string what) : std::runtime_error(std::move(what)) {}
};

struct IngestStats {
    std::uint64_t files = 0;
    std::uint64_t lines = 0;
    std::uint64_t parse_errors = 0;
    std::uint64_t points_offered = 0;
    std::uint64_t deadband_dropped = 0;
    std::uint64_t duplicates_dropped = 0;
    std::uint64_t conflicts = 0;
    std::uint64_t stale_dropped = 0;
    std::uint64_t sdt_rejected = 0;
    std::uint64_t points_archived = 0;
};

/// The archive directory plus the live compression state per stream. Sample
/// lines fan out into 7 points (temp, rh, lux, ax, ay, az, occ_pct); events
/// land on the occ / ori streams with deviation filtering disabled.
class Historian {
public:
    Historian(std::filesystem::path archive_dir, Settings settings);

    /// Parses and ingests one flat file's text. Thread-safe.
    IngestStats ingest_text(std::string_view text);

    /// Flushes held compression snapshots and rewrites the manifest.
    void flush_all();

    std::vector<Point> query_raw(const StreamKey& key, double t0, double t1) const;

    /// One row per interval step; absent outside the archived range.
    std::vector<std::pair<double, std::optional<double>>> query_interpolated(
        const StreamKey& key, double t0, double t1, double interval_s) const;

    std::vector<StreamKey> streams() const;
    std::uint64_t archived_count(const StreamKey& key) const;
    const IngestStats& totals() const { return totals_; }
    const std::filesystem::path& dir() const { return dir_; }

private:
    struct Stream {
        std::unique_ptr<StreamArchive> archive;
        ExceptionFilter exception;
        SwingingDoor door;
    };

    Stream& stream_for(const StreamKey& key);
    const Stream* find_stream(const StreamKey& key) const;
    void offer_point(Stream& s, const StreamSettings& cfg, const Point& p, IngestStats& stats);
    void write_manifest() const;
    void load_existing();

    std::filesystem::path dir_;
    Settings settings_;
    std::map<StreamKey, Stream> streams_;
    IngestStats totals_;
    mutable std::mutex mutex_;
};

/// Unit label for manifest/export purposes.
std::string stream_unit(const std::string& stream);

// ---- transfer receiver -------------------------------------------------------

/// Receiver side of the gateway's push protocol: verified bodies are written
/// to the inbox (temp + rename, duplicates overwrite) and ingested, then
/// acknowledged with 0x06; a CRC or framing failure answers 0x15 and writes
/// nothing. Transfers are handled one at a time.
class FileReceiver {
public:
    FileReceiver(std::string host, std::uint16_t port, std::filesystem::path inbox,
                 Historian& historian);
    ~FileReceiver();

    void start(); // throws std::runtime_error when the port cannot be bound
    void stop();

    std::uint16_t port() const { return port_; }

    struct Stats {
        std::uint64_t files_received = 0;
        std::uint64_t crc_failures = 0;
        std::uint64_t rejected = 0;
    };
    Stats stats() const;

private:
    void serve_loop();
    bool handle(net::TcpStream& stream);

    std::string host_;
    std::uint16_t port_;
    std::filesystem::path inbox_;
    Historian& historian_;
    net::TcpListener listener_;
    std::thread thread_;
    std::atomic<bool> running_{false};
    mutable std::mutex stats_mutex_;
    Stats stats_;
};

} // namespace telemote::ingest
