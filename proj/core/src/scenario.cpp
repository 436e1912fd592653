#include "telemote/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstring>
#include <fstream>
#include <thread>

#include "telemote/clock.hpp"
#include "telemote/gateway.hpp"
#include "telemote/log.hpp"

namespace telemote::scenario {

namespace fs = std::filesystem;
using node::VirtualNs;
using node::kNsPerSec;

void ScenarioConfig::validate() const {
    if (nodes < 0) throw std::invalid_argument("nodes must be >= 0");
    if (nodes > 0) {
        node::NodeConfig probe;
        probe.sample_interval_s = sample_interval_s;
        probe.report_interval_s = report_interval_s;
        probe.buffer_capacity_bytes = buffer_capacity_bytes;
        probe.validate();
    }
    if (poll_interval_s <= 0) throw std::invalid_argument("poll_interval_s must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (retention_days < 1) throw std::invalid_argument("retention_days must be >= 1");
    if (channel_failure_p < 0 || channel_failure_p >= 1)
        throw std::invalid_argument("channel_failure_p must be in [0, 1)");
    if (workdir.empty()) throw std::invalid_argument("workdir is required");
    for (const auto& [from, to] : gateway_down)
        if (to <= from) throw std::invalid_argument("gateway_down window is inverted");
}

namespace {

bool parse_bool(const std::string& v, bool& out) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") {
        out = true;
        return true;
    }
    if (v == "0" || v == "false" || v == "off" || v == "no") {
        out = false;
        return true;
    }
    return false;
}

template <typename T>
bool parse_int(const std::string& v, T& out) {
    long long x = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) return false;
    out = static_cast<T>(x);
    return static_cast<long long>(out) == x;
}

bool parse_f64(const std::string& v, double& out) {
    char* end = nullptr;
    out = std::strtod(v.c_str(), &end);
    return end == v.c_str() + v.size() && !v.empty();
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

} // namespace

ScenarioConfig parse_config(std::string_view text) {
    ScenarioConfig cfg;
    std::string section = "scenario";
    std::string ingest_overrides;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view raw = text.substr(pos, nl == std::string_view::npos ? nl : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        std::string line(raw);
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line.erase(0, line.find_first_not_of(" \t\r"));
        line.erase(line.find_last_not_of(" \t\r") + 1);
        if (line.empty()) continue;
        auto bad = [&](const std::string& why) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + why);
        };
        if (line.front() == '[') {
            if (line.back() != ']') bad("unterminated section header");
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) bad("expected key=value");
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        key.erase(key.find_last_not_of(" \t") + 1);
        value.erase(0, value.find_first_not_of(" \t"));

        bool ok = true;
        if (section == "scenario") {
            if (key == "nodes") ok = parse_int(value, cfg.nodes);
            else if (key == "sample_interval_s") ok = parse_int(value, cfg.sample_interval_s);
            else if (key == "report_interval_s") ok = parse_int(value, cfg.report_interval_s);
            else if (key == "duration_s") ok = parse_int(value, cfg.duration_s);
            else if (key == "seed") ok = parse_int(value, cfg.seed);
            else if (key == "epoch_unix") ok = parse_int(value, cfg.epoch_unix);
            else if (key == "buffer_capacity_bytes") ok = parse_int(value, cfg.buffer_capacity_bytes);
            else if (key == "zero_deviation") ok = parse_bool(value, cfg.zero_deviation);
            else if (key == "workdir") cfg.workdir = value;
            else if (key == "clock") {
                if (value == "virtual") cfg.wall_clock = false;
                else if (value == "wall") cfg.wall_clock = true;
                else ok = false;
            } else bad("unknown key " + key);
        } else if (section == "env") {
            if (key == "presence") ok = parse_bool(value, cfg.presence);
            else if (key == "glitches") ok = parse_bool(value, cfg.pir_glitches);
            else if (key == "orientation") ok = parse_bool(value, cfg.orientation_changes);
            else if (key == "calm") ok = parse_bool(value, cfg.calm_env);
            else bad("unknown key " + key);
        } else if (section == "faults") {
            if (key == "channel_failure_p") ok = parse_f64(value, cfg.channel_failure_p);
            else if (key == "gateway_down") {
                // comma-separated FROM..TO windows in virtual seconds
                std::size_t p = 0;
                while (p < value.size()) {
                    auto comma = value.find(',', p);
                    std::string win = value.substr(p, comma == std::string::npos ? comma : comma - p);
                    p = comma == std::string::npos ? value.size() : comma + 1;
                    win.erase(0, win.find_first_not_of(" \t"));
                    win.erase(win.find_last_not_of(" \t") + 1);
                    const auto dots = win.find("..");
                    std::uint32_t from = 0, to = 0;
                    if (dots == std::string::npos || !parse_int(win.substr(0, dots), from) ||
                        !parse_int(win.substr(dots + 2), to))
                        bad("bad gateway_down window");
                    cfg.gateway_down.emplace_back(from, to);
                }
            } else bad("unknown key " + key);
        } else if (section == "gateway") {
            if (key == "poll_interval_s") ok = parse_f64(value, cfg.poll_interval_s);
            else if (key == "batch_size") ok = parse_int(value, cfg.batch_size);
            else if (key == "retention_days") ok = parse_int(value, cfg.retention_days);
            else bad("unknown key " + key);
        } else if (section == "ingest") {
            // stream.param=value lines collected for ingest::Settings::parse
            if (key.find('.') == std::string::npos) bad("unknown key " + key);
            ingest_overrides += key + "=" + value + "\n";
        } else if (section.starts_with("node.")) {
            std::uint16_t dev = 0;
            if (!parse_int(section.substr(5), dev)) bad("bad node section");
            auto& ov = cfg.node_overrides[dev];
            if (key == "sample_interval_s") {
                std::uint32_t v;
                ok = parse_int(value, v);
                ov.sample_interval_s = v;
            } else if (key == "report_interval_s") {
                std::uint32_t v;
                ok = parse_int(value, v);
                ov.report_interval_s = v;
            } else if (key == "buffer_capacity_bytes") {
                std::size_t v;
                ok = parse_int(value, v);
                ov.buffer_capacity_bytes = v;
            } else bad("unknown key " + key);
        } else {
            bad("unknown section " + section);
        }
        if (!ok) bad("bad value for " + key);
    }
    if (!ingest_overrides.empty()) cfg.ingest_settings = ingest::Settings::parse(ingest_overrides);
    return cfg;
}

namespace {

/// Real TCP to the in-process gateway, with virtual-time outage windows.
class TcpReportTransport final : public node::ReportTransport {
public:
    TcpReportTransport(std::string host, std::uint16_t port,
                       std::vector<std::pair<std::uint32_t, std::uint32_t>> down)
        : host_(std::move(host)), port_(port), down_(std::move(down)) {}

    bool deliver(VirtualNs t, std::span<const std::uint8_t> session) override {
        for (const auto& [from, to] : down_) {
            if (t >= static_cast<VirtualNs>(from) * kNsPerSec &&
                t < static_cast<VirtualNs>(to) * kNsPerSec)
                return false; // gateway unreachable in this window
        }
        auto stream = net::TcpStream::connect(host_, port_, 5000);
        if (!stream) return false;
        if (!stream->write_all(session)) return false;
        stream->shutdown_write();
        std::uint8_t ack = 0;
        if (!stream->read_exact({&ack, 1})) return false;
        return ack == wire::kAck;
    }

private:
    std::string host_;
    std::uint16_t port_;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> down_;
};

class FlakyChannel final : public gateway::TransferChannel {
public:
    FlakyChannel(gateway::TransferChannel& inner, double failure_p, std::uint64_t seed)
        : inner_(inner), failure_p_(failure_p), state_(seed) {}

    bool put(const std::string& name, std::span<const std::uint8_t> body) override {
        if (failure_p_ > 0) {
            const double roll = (splitmix(state_ = splitmix(state_)) >> 11) * 0x1.0p-53;
            if (roll < failure_p_) return false;
        }
        return inner_.put(name, body);
    }

private:
    gateway::TransferChannel& inner_;
    double failure_p_;
    std::uint64_t state_;
};

std::uint64_t count_lines(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::uint64_t n = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

} // namespace

std::string RunReport::to_text() const {
    std::string out;
    char buf[320];
    out += "run report\n";
    for (const auto& n : nodes) {
        std::snprintf(buf, sizeof buf,
                      "node %u: samples=%llu occ=%llu ori=%llu generated=%llu confirmed=%llu "
                      "overflow=%llu reports_ok=%llu reports_failed=%llu buffered=%llu\n",
                      n.device_id, (unsigned long long)n.samples, (unsigned long long)n.occ_events,
                      (unsigned long long)n.ori_events, (unsigned long long)n.generated,
                      (unsigned long long)n.confirmed, (unsigned long long)n.overflow_dropped,
                      (unsigned long long)n.reports_ok, (unsigned long long)n.reports_failed,
                      (unsigned long long)n.buffered_at_end);
        out += buf;
    }
    std::snprintf(buf, sizeof buf,
                  "gateway: connections=%llu rejected=%llu files=%llu lines=%llu "
                  "frames_dropped=%llu records_dropped=%llu\n",
                  (unsigned long long)gw_connections, (unsigned long long)gw_rejected,
                  (unsigned long long)gw_files_written, (unsigned long long)gw_lines_written,
                  (unsigned long long)gw_frames_dropped, (unsigned long long)gw_records_dropped);
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "distributor: rounds=%llu sent=%llu failed=%llu saturation=%llu purged_dirs=%llu "
                  "unsent_at_end=%llu\n",
                  (unsigned long long)dist_rounds, (unsigned long long)files_sent,
                  (unsigned long long)files_failed, (unsigned long long)saturation_events,
                  (unsigned long long)directories_purged, (unsigned long long)spool_unsent_at_end);
    out += buf;
    std::snprintf(buf, sizeof buf, "ingest: files=%llu lines=%llu parse_errors=%llu archived=%llu\n",
                  (unsigned long long)ingest_files, (unsigned long long)ingest_lines,
                  (unsigned long long)ingest_parse_errors, (unsigned long long)points_archived);
    out += buf;
    for (const auto& [stream, count] : archived_per_stream) {
        std::snprintf(buf, sizeof buf, "stream %s archived=%llu\n", stream.c_str(),
                      (unsigned long long)count);
        out += buf;
    }
    out += "conservation: ";
    out += conservation_ok ? "OK" : "FAIL";
    out += " (" + conservation_detail + ")\n";
    return out;
}

RunReport run_simulation(const ScenarioConfig& config) {
    config.validate();

    fs::create_directories(config.workdir);
    const fs::path spool_root = config.workdir / "spool";
    const fs::path inbox = config.workdir / "inbox";
    const fs::path archive_dir = config.workdir / "archive";

    SimClock clock(config.epoch_unix);

    ingest::Settings settings = config.ingest_settings
                                    ? *config.ingest_settings
                                    : (config.zero_deviation ? ingest::Settings::zero_deviation()
                                                             : ingest::Settings::defaults());
    ingest::Historian historian(archive_dir, settings);
    ingest::FileReceiver receiver("127.0.0.1", 0, inbox, historian);
    receiver.start();

    gateway::SpoolConfig gw_config;
    gw_config.listen_host = "127.0.0.1";
    gw_config.listen_port = 0;
    gw_config.spool_root = spool_root;
    gw_config.retention_days = config.retention_days;
    gw_config.poll_interval_s = config.poll_interval_s;
    gw_config.batch_size = config.batch_size;
    gw_config.epoch_unix = config.epoch_unix;
    gateway::SpoolListener listener(gw_config, clock);
    listener.start();

    gateway::TcpPushChannel push_channel("127.0.0.1", receiver.port());
    FlakyChannel channel(push_channel, config.channel_failure_p, splitmix(config.seed ^ 0x51ull));
    gateway::Distributor distributor(gw_config, channel, clock);

    node::EnvProfile base_profile = config.calm_env ? node::EnvProfile::calm() : node::EnvProfile{};
    if (!config.calm_env) {
        base_profile.presence_enabled = config.presence;
        base_profile.pir_glitches = config.pir_glitches;
        base_profile.orientation_changes = config.orientation_changes;
    }

    TcpReportTransport transport("127.0.0.1", listener.port(), config.gateway_down);
    std::vector<std::unique_ptr<node::Node>> nodes;
    for (int i = 0; i < config.nodes; ++i) {
        const auto device_id = static_cast<std::uint16_t>(i + 1);
        node::NodeConfig ncfg;
        ncfg.device_id = device_id;
        ncfg.sample_interval_s = config.sample_interval_s;
        ncfg.report_interval_s = config.report_interval_s;
        ncfg.buffer_capacity_bytes = config.buffer_capacity_bytes;
        if (auto it = config.node_overrides.find(device_id); it != config.node_overrides.end()) {
            if (it->second.sample_interval_s) ncfg.sample_interval_s = *it->second.sample_interval_s;
            if (it->second.report_interval_s) ncfg.report_interval_s = *it->second.report_interval_s;
            if (it->second.buffer_capacity_bytes)
                ncfg.buffer_capacity_bytes = *it->second.buffer_capacity_bytes;
        }
        node::VirtualEnvironment env(splitmix(config.seed) ^ (0x9E3779B97F4A7C15ull * device_id),
                                     base_profile);
        nodes.push_back(std::make_unique<node::Node>(ncfg, std::move(env), &transport));
    }

    const VirtualNs duration_ns = static_cast<VirtualNs>(config.duration_s) * kNsPerSec;
    const VirtualNs poll_ns =
        std::max<VirtualNs>(static_cast<VirtualNs>(config.poll_interval_s * 1e9), kNsPerSec);
    VirtualNs next_distribute = poll_ns;
    const auto wall_start = std::chrono::steady_clock::now();

    for (;;) {
        VirtualNs best_t = std::numeric_limits<VirtualNs>::max();
        node::Node* best_node = nullptr;
        for (auto& n : nodes) {
            const VirtualNs t = n->next_event_time();
            if (t < best_t) {
                best_t = t;
                best_node = n.get();
            }
        }
        const bool dist_due = next_distribute <= duration_ns &&
                              (best_node == nullptr || next_distribute < best_t);
        const VirtualNs event_t = dist_due ? next_distribute : best_t;
        if (event_t > duration_ns) break;
        if (config.wall_clock)
            std::this_thread::sleep_until(wall_start + std::chrono::nanoseconds(event_t));
        clock.set(config.epoch_unix + event_t / kNsPerSec);
        if (dist_due) {
            distributor.run_round();
            next_distribute += poll_ns;
        } else {
            best_node->step_until(event_t);
        }
    }

    clock.set(config.epoch_unix + config.duration_s);
    for (auto& n : nodes) {
        n->step_until(duration_ns);
        n->drain();
    }
    // Drain the spool; bounded in case the channel stays broken.
    for (int i = 0; i < 10000; ++i) {
        const auto round = distributor.run_round();
        if (round.backlog_after == 0 || round.files_sent == 0) break;
    }
    historian.flush_all();
    listener.stop();
    receiver.stop();

    RunReport report;
    std::uint64_t generated = 0, overflow = 0, buffered = 0;
    for (const auto& n : nodes) {
        const auto& s = n->stats();
        RunReport::NodeRow row;
        row.device_id = n->config().device_id;
        row.samples = s.samples;
        row.occ_events = s.occ_events;
        row.ori_events = s.ori_events;
        row.generated = s.messages_generated;
        row.confirmed = s.messages_confirmed;
        row.overflow_dropped = s.overflow_dropped;
        row.reports_ok = s.reports_ok;
        row.reports_failed = s.reports_failed;
        row.buffered_at_end = n->buffered_messages();
        report.nodes.push_back(row);
        generated += s.messages_generated;
        overflow += s.overflow_dropped;
        buffered += row.buffered_at_end;
    }

    const auto gw = listener.stats();
    report.gw_connections = gw.connections;
    report.gw_rejected = gw.rejected;
    report.gw_files_written = gw.files_written;
    report.gw_lines_written = gw.lines_written;
    report.gw_frames_dropped = gw.frames_dropped;
    report.gw_records_dropped = gw.records_dropped;

    const auto dist = distributor.stats();
    report.dist_rounds = dist.rounds;
    report.files_sent = dist.files_sent;
    report.files_failed = dist.files_failed;
    report.saturation_events = dist.saturation_events;
    report.directories_purged = dist.directories_purged;
    const auto unsent = gateway::unsent_files(gw_config);
    report.spool_unsent_at_end = unsent.size();
    for (const auto& f : unsent) report.spool_lines_unsent += count_lines(f);

    const auto& totals = historian.totals();
    report.ingest_files = totals.files;
    report.ingest_lines = totals.lines;
    report.ingest_parse_errors = totals.parse_errors;
    report.points_archived = totals.points_archived;
    for (const auto& key : historian.streams())
        report.archived_per_stream.emplace_back(key.display(), historian.archived_count(key));

    const std::uint64_t expected = generated - overflow - buffered;
    const std::uint64_t accounted = report.ingest_lines + report.spool_lines_unsent;
    report.conservation_ok = expected == accounted && report.ingest_parse_errors == 0 &&
                             report.gw_frames_dropped == 0 && report.gw_records_dropped == 0;
    char detail[160];
    std::snprintf(detail, sizeof detail,
                  "generated %llu - overflow %llu - buffered %llu = %llu; ingested %llu + unsent %llu = %llu",
                  (unsigned long long)generated, (unsigned long long)overflow,
                  (unsigned long long)buffered, (unsigned long long)expected,
                  (unsigned long long)report.ingest_lines,
                  (unsigned long long)report.spool_lines_unsent, (unsigned long long)accounted);
    report.conservation_detail = detail;
    return report;
}

} // namespace telemote::scenario
