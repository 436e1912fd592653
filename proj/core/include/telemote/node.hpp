#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "telemote/env.hpp"
#include "telemote/pir.hpp"
#include "telemote/recordstore.hpp"
#include "telemote/schedule.hpp"
#include "telemote/wire.hpp"

namespace telemote::node {

struct NodeConfig {
    std::uint16_t device_id = 1;
    std::uint32_t sample_interval_s = 10;
    std::uint32_t report_interval_s = 60;
    std::size_t buffer_capacity_bytes = 13968; // 16384 RAM - 2416 program

    void validate() const; // throws std::invalid_argument
};

enum class FsmState : std::uint8_t { Sleep, CheckAsynch, Sample, Report };

const char* to_string(FsmState s);

/// State-entry log record (SLEEP re-entries are implicit).
struct Transition {
    VirtualNs t;
    FsmState state;

    bool operator==(const Transition&) const = default;
};

struct TaskLogEntry {
    VirtualNs sample_t = 0;
    std::uint32_t offset_ms = 0;
    bool last = false;
    std::string component;
    std::string action;
};

/// Ships one report session (HELLO + record frames + END, already framed).
/// Returns true only on confirmed delivery; anything else leaves the caller's
/// buffer intact for the next attempt.
class ReportTransport {
public:
    virtual ~ReportTransport() = default;
    virtual bool deliver(VirtualNs t, std::span<const std::uint8_t> session) = 0;
};

struct NodeStats {
    std::uint64_t samples = 0;
    std::uint64_t occ_events = 0;
    std::uint64_t ori_events = 0;
    std::uint64_t messages_generated = 0;
    std::uint64_t messages_confirmed = 0;
    std::uint64_t overflow_dropped = 0;
    std::uint64_t reports_attempted = 0;
    std::uint64_t reports_ok = 0;
    std::uint64_t reports_failed = 0;
    std::uint64_t forced_reports = 0;
};

/// Deterministic simulator of one sensor node's firmware loop: sleeps between
/// events, samples every sample_interval, reports the buffered records every
/// report_interval, and services PIR/orientation interrupts in between.
class Node {
public:
    Node(NodeConfig cfg, VirtualEnvironment env, ReportTransport* transport);

    /// Processes every event at times <= until (virtual ns).
    void step_until(VirtualNs until);

    /// Earliest pending event. Events are never earlier than now().
    VirtualNs next_event_time() const;

    VirtualNs now() const { return now_; }

    /// Forced report of whatever is buffered, at the current virtual time.
    void drain();

    const NodeConfig& config() const { return cfg_; }
    const NodeStats& stats() const { return stats_; }
    const std::vector<Transition>& transitions() const { return transitions_; }
    const std::vector<TaskLogEntry>& task_log() const { return task_log_; }
    std::size_t buffered_messages() const { return store_.record_count(); }
    const recordstore::Stats& buffer_stats() const { return store_.stats(); }

    /// Every byte handed to the transport, in order (report sessions
    /// back to back). Identical configs and seeds produce identical bytes.
    const std::vector<std::uint8_t>& transcript() const { return transcript_; }

    const VirtualEnvironment& env() const { return env_; }

private:
    // Free arena space below which a report is forced to protect new data.
    static constexpr std::size_t kLowSpaceBytes = 160;

    struct PendingEvent {
        VirtualNs t;
        int priority; // lower runs first at equal times
        int kind;
    };

    void handle_pir_timeout();
    void handle_pir_edge(const PirEdge& e);
    void handle_orientation(VirtualNs t);
    void run_sampling_pass(VirtualNs t);
    void do_report(VirtualNs t, bool forced);
    void store_message(VirtualNs t, const wire::SensorMessage& msg);
    void emit_occ_events(std::span<const PirDebouncer::Event> events);

    NodeConfig cfg_;
    VirtualEnvironment env_;
    ReportTransport* transport_;

    VirtualNs now_ = 0;
    VirtualNs last_sample_ = 0;
    VirtualNs last_report_ = 0;
    VirtualNs pir_cursor_ = -1;  // time of last consumed env PIR edge
    VirtualNs pose_cursor_ = -1; // time of last consumed env orientation change

    recordstore::RecordStore store_;
    PirDebouncer pir_;
    GravityPose orientation_;

    NodeStats stats_;
    std::vector<Transition> transitions_;
    std::vector<TaskLogEntry> task_log_;
    std::vector<std::uint8_t> transcript_;
};

} // namespace telemote::node
