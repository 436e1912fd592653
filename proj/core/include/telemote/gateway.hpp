#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "telemote/clock.hpp"
#include "telemote/net.hpp"
#include "telemote/wire.hpp"

namespace telemote::gateway {

struct SpoolConfig {
    std::string listen_host = "127.0.0.1";
    std::uint16_t listen_port = 0; // 0 = ephemeral
    std::filesystem::path spool_root;
    int retention_days = 10;
    double poll_interval_s = 30.0;
    int batch_size = 50;
    std::int64_t epoch_unix = 0; // added to message timestamps in line output

    void validate() const; // throws std::invalid_argument
};

/// Flat-file line for one decoded message:
///   S,<dev>,<ts>,<temp 2dp>,<rh 2dp>,<lux>,<ax 3dp>,<ay 3dp>,<az 3dp>,<occ 1dp>
///   E,<dev>,<ts>,OCC,<0|1>
///   E,<dev>,<ts>,ORI,<x|y|z>,<+|->
std::string message_to_line(const wire::SensorMessage& msg, std::int64_t epoch_unix);

/// Accepts report connections and writes one spool file per connection under
/// spool_root/YYYYMMDD/HHMMSS_<device>_<seq>.txt. Confirms each fully
/// received session with a single ACK byte; the sender keeps its buffer
/// otherwise.
class SpoolListener {
public:
    SpoolListener(SpoolConfig config, Clock& clock);
    ~SpoolListener();

    void start(); // throws std::runtime_error if the port cannot be bound
    void stop();

    std::uint16_t port() const { return port_; }

    struct Stats {
        std::uint64_t connections = 0;
        std::uint64_t rejected = 0;
        std::uint64_t files_written = 0;
        std::uint64_t lines_written = 0;
        std::uint64_t frames_dropped = 0;
        std::uint64_t records_dropped = 0;
        std::uint64_t partial_connections = 0;
    };
    Stats stats() const;

private:
    void accept_loop();
    void handle_connection(net::TcpStream stream);
    std::filesystem::path next_file_path(std::uint16_t device_id);

    SpoolConfig config_;
    Clock& clock_;
    net::TcpListener listener_;
    std::uint16_t port_ = 0;
    std::thread accept_thread_;
    std::vector<std::thread> connection_threads_;
    std::mutex threads_mutex_;
    std::mutex naming_mutex_;
    std::map<std::pair<std::int64_t, std::uint16_t>, int> seq_; // (second, device) -> next
    std::atomic<bool> running_{false};

    mutable std::mutex stats_mutex_;
    Stats stats_;
};

/// Reliable file push: put() either fully delivers or fully fails.
class TransferChannel {
public:
    virtual ~TransferChannel() = default;
    virtual bool put(const std::string& name, std::span<const std::uint8_t> body) = 0;
};

/// Length-prefixed push over TCP:
///   [name_len u16 LE][name][body_len u32 LE][body][crc32(body) u32 LE]
/// The receiver answers 0x06 after a verified write, 0x15 otherwise.
class TcpPushChannel final : public TransferChannel {
public:
    TcpPushChannel(std::string host, std::uint16_t port, int timeout_ms = 5000)
        : host_(std::move(host)), port_(port), timeout_ms_(timeout_ms) {}

    bool put(const std::string& name, std::span<const std::uint8_t> body) override;

private:
    std::string host_;
    std::uint16_t port_;
    int timeout_ms_;
};

struct DistributeResult {
    int files_sent = 0;
    int files_failed = 0;
    int backlog_after = 0;
};

/// One distribution round: sends up to batch_size unsent files oldest-first,
/// renaming each to <name>.sent on success. A channel failure defers the rest
/// of the round.
DistributeResult distribute(const SpoolConfig& config, TransferChannel& channel);

/// Unsent spool files, oldest first.
std::vector<std::filesystem::path> unsent_files(const SpoolConfig& config);

struct PurgeResult {
    int directories_removed = 0;
    int unsent_files_dropped = 0; // logged: these never reached the server
};

/// Removes day directories strictly older than retention_days relative to
/// `now`, sent or not.
PurgeResult purge(const SpoolConfig& config, std::int64_t now_unix);

/// Polling worker: distribute + purge every poll interval, with a saturation
/// counter that trips whenever the backlog grows between rounds.
class Distributor {
public:
    Distributor(SpoolConfig config, TransferChannel& channel, Clock& clock);
    ~Distributor();

    void start();
    void stop();

    /// Runs a single round immediately (also used by simulations that drive
    /// virtual time themselves).
    DistributeResult run_round();

    struct Stats {
        std::uint64_t rounds = 0;
        std::uint64_t files_sent = 0;
        std::uint64_t files_failed = 0;
        std::uint64_t saturation_events = 0;
        std::uint64_t directories_purged = 0;
        std::uint64_t unsent_purged = 0;
    };
    Stats stats() const;

private:
    SpoolConfig config_;
    TransferChannel& channel_;
    Clock& clock_;
    std::thread worker_;
    std::atomic<bool> running_{false};
    mutable std::mutex mutex_;
    Stats stats_;
    int last_backlog_ = 0;
};

} // namespace telemote::gateway
