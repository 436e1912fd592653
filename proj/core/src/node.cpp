#include "telemote/node.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace telemote::node {

namespace {

constexpr VirtualNs kNever = std::numeric_limits<VirtualNs>::max();

std::int16_t to_centi_i16(double v, double lo, double hi) {
    const double c = std::clamp(std::round(v * 100.0), lo, hi);
    return static_cast<std::int16_t>(c);
}

std::uint16_t to_centi_u16(double v, double hi) {
    const double c = std::clamp(std::round(v * 100.0), 0.0, hi);
    return static_cast<std::uint16_t>(c);
}

std::uint16_t to_lux_u16(double v) {
    const double c = std::clamp(std::round(v), 0.0, 65535.0);
    return static_cast<std::uint16_t>(c);
}

std::int16_t to_milli_i16(double v) {
    const double c = std::clamp(std::round(v * 1000.0), -8000.0, 8000.0);
    return static_cast<std::int16_t>(c);
}

std::uint32_t ts_seconds(VirtualNs t) { return static_cast<std::uint32_t>(t / kNsPerSec); }

} // namespace

void NodeConfig::validate() const {
    if (sample_interval_s < 1) throw std::invalid_argument("sample interval must be >= 1 s");
    if (report_interval_s < sample_interval_s)
        throw std::invalid_argument("report interval must be >= sample interval");
    if (buffer_capacity_bytes < 256) throw std::invalid_argument("buffer capacity must be >= 256");
}

const char* to_string(FsmState s) {
    switch (s) {
    case FsmState::Sleep: return "SLEEP";
    case FsmState::CheckAsynch: return "CHECK_ASYNCH";
    case FsmState::Sample: return "SAMPLE";
    case FsmState::Report: return "REPORT";
    }
    return "?";
}

Node::Node(NodeConfig cfg, VirtualEnvironment env, ReportTransport* transport)
    : cfg_(cfg), env_(std::move(env)), transport_(transport), store_(cfg.buffer_capacity_bytes) {
    cfg_.validate();
    orientation_ = dominant_orientation(env_.acceleration_g(0));
}

VirtualNs Node::next_event_time() const {
    VirtualNs next = kNever;
    if (auto t = pir_.pending_timeout()) next = std::min(next, *t);
    if (auto e = env_.next_pir_edge_after(pir_cursor_)) next = std::min(next, e->t);
    if (auto t = env_.next_orientation_change_after(pose_cursor_)) next = std::min(next, *t);
    next = std::min(next, last_sample_ + static_cast<VirtualNs>(cfg_.sample_interval_s) * kNsPerSec);
    next = std::min(next, last_report_ + static_cast<VirtualNs>(cfg_.report_interval_s) * kNsPerSec);
    return next;
}

void Node::step_until(VirtualNs until) {
    if (until < now_) throw std::invalid_argument("step_until before current time");
    for (;;) {
        // Gather pending events; at equal instants interrupts are serviced
        // first, then SAMPLE, then REPORT (so a report carries the sample
        // taken at the same tick).
        VirtualNs best_t = kNever;
        int best_kind = -1;
        auto consider = [&](VirtualNs t, int kind) {
            if (t < best_t) {
                best_t = t;
                best_kind = kind;
            }
        };
        enum { PirTimeout, PirEdgeEv, OrientationEv, SampleEv, ReportEv };
        if (auto t = pir_.pending_timeout()) consider(*t, PirTimeout);
        std::optional<PirEdge> edge = env_.next_pir_edge_after(pir_cursor_);
        if (edge) consider(edge->t, PirEdgeEv);
        std::optional<VirtualNs> pose_t = env_.next_orientation_change_after(pose_cursor_);
        if (pose_t) consider(*pose_t, OrientationEv);
        consider(last_sample_ + static_cast<VirtualNs>(cfg_.sample_interval_s) * kNsPerSec,
                 SampleEv);
        consider(last_report_ + static_cast<VirtualNs>(cfg_.report_interval_s) * kNsPerSec,
                 ReportEv);

        if (best_t > until) break;
        now_ = best_t;
        switch (best_kind) {
        case PirTimeout:
            handle_pir_timeout();
            break;
        case PirEdgeEv:
            handle_pir_edge(*edge);
            break;
        case OrientationEv:
            handle_orientation(*pose_t);
            break;
        case SampleEv:
            transitions_.push_back({now_, FsmState::Sample});
            run_sampling_pass(now_);
            last_sample_ = now_;
            break;
        case ReportEv:
            transitions_.push_back({now_, FsmState::Report});
            do_report(now_, false);
            break;
        }
    }
    now_ = until;
}

void Node::handle_pir_timeout() {
    transitions_.push_back({now_, FsmState::CheckAsynch});
    auto events = pir_.poll(now_);
    emit_occ_events(events);
}

void Node::handle_pir_edge(const PirEdge& e) {
    transitions_.push_back({now_, FsmState::CheckAsynch});
    auto events = pir_.on_edge(e.t, e.level);
    pir_cursor_ = e.t;
    emit_occ_events(events);
}

void Node::emit_occ_events(std::span<const PirDebouncer::Event> events) {
    for (const auto& ev : events) {
        wire::SensorMessage msg;
        msg.device_id = cfg_.device_id;
        msg.timestamp = ts_seconds(ev.t);
        msg.payload = wire::OccEvent{ev.state};
        ++stats_.occ_events;
        store_message(now_, msg);
    }
}

void Node::handle_orientation(VirtualNs t) {
    transitions_.push_back({now_, FsmState::CheckAsynch});
    pose_cursor_ = t;
    const GravityPose pose = dominant_orientation(env_.acceleration_g(t));
    if (pose == orientation_) return;
    orientation_ = pose;
    wire::SensorMessage msg;
    msg.device_id = cfg_.device_id;
    msg.timestamp = ts_seconds(t);
    msg.payload = wire::OriEvent{pose.axis, pose.sign};
    ++stats_.ori_events;
    store_message(now_, msg);
}

void Node::run_sampling_pass(VirtualNs t) {
    wire::Sample sample;
    TaskScheduler sched;
    sched.schedule(0, "reporting", "start sensor data report", [](VirtualNs) {});
    sched.schedule(1, "temp_humid", "start humidity conversion", [](VirtualNs) {});
    sched.schedule(1, "pir", "occupancy percentage and reset", [&](VirtualNs) {
        const std::uint64_t ticks = pir_.take_window_high_ticks(t);
        sample.occupancy_fraction = occupancy_fraction(ticks, cfg_.sample_interval_s);
    });
    sched.schedule(1, "light", "wake light sensor", [](VirtualNs) {});
    sched.schedule(1, "accel", "read acceleration", [&](VirtualNs at) {
        const auto a = env_.acceleration_g(at);
        for (int i = 0; i < 3; ++i) sample.accel_mg[i] = to_milli_i16(a[i]);
    });
    sched.schedule(17, "temp_humid", "read humidity, start temperature conversion",
                   [&](VirtualNs at) {
                       sample.humidity_crh = to_centi_u16(env_.humidity_rh(at), 10000.0);
                   });
    sched.schedule(67, "temp_humid", "read temperature", [&](VirtualNs at) {
        sample.temperature_cc = to_centi_i16(env_.temperature_c(at), -4000.0, 8500.0);
    });
    sched.schedule(106, "light", "read ambient light", [&](VirtualNs at) {
        sample.illuminance_lux = to_lux_u16(env_.illuminance_lux(at));
    });
    sched.schedule_last("reporting", "store sensor data report", [&](VirtualNs) {
        wire::SensorMessage msg;
        msg.device_id = cfg_.device_id;
        msg.timestamp = ts_seconds(t);
        msg.payload = sample;
        ++stats_.samples;
        store_message(t, msg);
    });
    sched.run(t, [&](const TaskScheduler::TaskInfo& info) {
        task_log_.push_back({t, info.offset_ms, info.last, info.component, info.action});
    });
}

void Node::store_message(VirtualNs t, const wire::SensorMessage& msg) {
    ++stats_.messages_generated;
    const auto bytes = wire::encode_message(msg);
    try {
        store_.append(bytes);
    } catch (const recordstore::CapacityError&) {
        transitions_.push_back({t, FsmState::Report});
        do_report(t, true);
        try {
            store_.append(bytes);
        } catch (const recordstore::CapacityError&) {
            ++stats_.overflow_dropped;
            return;
        }
    }
    if (store_.free_bytes() < kLowSpaceBytes) {
        transitions_.push_back({t, FsmState::Report});
        do_report(t, true);
    }
}

void Node::do_report(VirtualNs t, bool forced) {
    const auto records = store_.records();
    const auto count = static_cast<std::uint16_t>(store_.record_count());

    std::vector<std::uint8_t> session;
    auto add_frame = [&session](std::span<const std::uint8_t> payload) {
        const auto frame = wire::frame_encode(payload);
        session.insert(session.end(), frame.begin(), frame.end());
    };
    add_frame(wire::make_hello(cfg_.device_id, wire::kProtocolVersion, count));
    for (const auto& r : records) add_frame(r);
    add_frame(wire::make_end(count));

    transcript_.insert(transcript_.end(), session.begin(), session.end());
    ++stats_.reports_attempted;
    if (forced) ++stats_.forced_reports;

    const bool ok = transport_ != nullptr && transport_->deliver(t, session);
    if (ok) {
        ++stats_.reports_ok;
        stats_.messages_confirmed += count;
        store_.clear();
    } else {
        ++stats_.reports_failed;
    }
    // Failed reports retry at the next regular report tick.
    last_report_ = t;
}

void Node::drain() {
    if (store_.record_count() == 0) return;
    transitions_.push_back({now_, FsmState::Report});
    do_report(now_, true);
}

} // namespace telemote::node
