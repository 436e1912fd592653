#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>

#include "telemote/clock.hpp"
#include "telemote/gateway.hpp"
#include "telemote/ingest.hpp"
#include "telemote/log.hpp"
#include "telemote/power.hpp"
#include "telemote/scenario.hpp"

namespace fs = std::filesystem;
using namespace telemote;

namespace {

volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void split_host_port(const std::string& s, std::string& host, std::uint16_t& port) {
    const auto colon = s.rfind(':');
    if (colon == std::string::npos) throw CLI::ValidationError("expected HOST:PORT, got " + s);
    host = s.substr(0, colon);
    port = static_cast<std::uint16_t>(std::stoi(s.substr(colon + 1)));
}

std::vector<double> parse_grid(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

int wait_for_stop() {
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    return 0;
}

int cmd_simulate(scenario::ScenarioConfig cfg) {
    const auto report = scenario::run_simulation(cfg);
    std::cout << report.to_text();
    return report.conservation_ok ? 0 : 2;
}

pid_t spawn_child(const std::vector<std::string>& args) {
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const pid_t pid = fork();
    if (pid == 0) {
        execv("/proc/self/exe", argv.data());
        _exit(127);
    }
    return pid;
}

bool wait_until_connectable(std::uint16_t port, int attempts = 50) {
    for (int i = 0; i < attempts; ++i) {
        if (auto s = net::TcpStream::connect("127.0.0.1", port, 200)) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    return false;
}

/// Same scenario, but gateway and ingest run as separate processes over real
/// sockets. Timestamps stay virtual; the services run on the system clock.
int cmd_simulate_distributed(scenario::ScenarioConfig cfg, std::uint16_t gateway_port,
                             std::uint16_t ingest_port) {
    cfg.validate();
    fs::create_directories(cfg.workdir);
    const fs::path spool = cfg.workdir / "spool";
    const fs::path inbox = cfg.workdir / "inbox";
    const fs::path archive = cfg.workdir / "archive";

    const pid_t ingest_pid = spawn_child(
        {"telemote", "serve-ingest", "--listen", "127.0.0.1:" + std::to_string(ingest_port),
         "--inbox", inbox.string(), "--archive-dir", archive.string()});
    const pid_t gateway_pid = spawn_child(
        {"telemote", "serve-gateway", "--listen", "127.0.0.1:" + std::to_string(gateway_port),
         "--spool-root", spool.string(), "--dest", "127.0.0.1:" + std::to_string(ingest_port),
         "--poll-interval", "0.2", "--batch-size", std::to_string(cfg.batch_size), "--epoch",
         std::to_string(cfg.epoch_unix)});

    auto stop_children = [&] {
        kill(gateway_pid, SIGTERM);
        kill(ingest_pid, SIGTERM);
        int status = 0;
        waitpid(gateway_pid, &status, 0);
        waitpid(ingest_pid, &status, 0);
    };
    if (!wait_until_connectable(ingest_port) || !wait_until_connectable(gateway_port)) {
        stop_children();
        std::cerr << "services failed to start\n";
        return 1;
    }

    node::EnvProfile profile = cfg.calm_env ? node::EnvProfile::calm() : node::EnvProfile{};
    if (!cfg.calm_env) {
        profile.presence_enabled = cfg.presence;
        profile.pir_glitches = cfg.pir_glitches;
        profile.orientation_changes = cfg.orientation_changes;
    }

    class Transport final : public node::ReportTransport {
    public:
        Transport(std::uint16_t port) : port_(port) {}
        bool deliver(node::VirtualNs, std::span<const std::uint8_t> session) override {
            auto s = net::TcpStream::connect("127.0.0.1", port_, 5000);
            if (!s || !s->write_all(session)) return false;
            s->shutdown_write();
            std::uint8_t ack = 0;
            return s->read_exact({&ack, 1}) && ack == wire::kAck;
        }

    private:
        std::uint16_t port_;
    } transport(gateway_port);

    std::uint64_t generated = 0, confirmed = 0;
    for (int i = 0; i < cfg.nodes; ++i) {
        node::NodeConfig ncfg;
        ncfg.device_id = static_cast<std::uint16_t>(i + 1);
        ncfg.sample_interval_s = cfg.sample_interval_s;
        ncfg.report_interval_s = cfg.report_interval_s;
        ncfg.buffer_capacity_bytes = cfg.buffer_capacity_bytes;
        node::VirtualEnvironment env(cfg.seed * 1000003ull + ncfg.device_id, profile);
        node::Node n(ncfg, std::move(env), &transport);
        n.step_until(static_cast<node::VirtualNs>(cfg.duration_s) * node::kNsPerSec);
        n.drain();
        generated += n.stats().messages_generated;
        confirmed += n.stats().messages_confirmed;
        std::printf("node %u: generated=%llu confirmed=%llu\n", ncfg.device_id,
                    (unsigned long long)n.stats().messages_generated,
                    (unsigned long long)n.stats().messages_confirmed);
    }

    // Let the distributor drain the spool before shutdown.
    gateway::SpoolConfig probe;
    probe.spool_root = spool;
    for (int i = 0; i < 100 && !gateway::unsent_files(probe).empty(); ++i)
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
    const auto unsent = gateway::unsent_files(probe).size();
    stop_children();

    std::printf("distributed run: generated=%llu confirmed=%llu spool_unsent=%zu\n",
                (unsigned long long)generated, (unsigned long long)confirmed, unsent);
    return (confirmed == generated && unsent == 0) ? 0 : 2;
}

int cmd_power_surface(const std::string& samples_csv, const std::string& reports_csv,
                      const std::string& out_path) {
    const auto samples = parse_grid(samples_csv);
    const auto reports = parse_grid(reports_csv);
    const auto surface =
        power::lifetime_surface(power::PowerProfile{}, power::BatterySpec::standard(), samples,
                                reports);
    const std::string csv = power::surface_csv(surface);
    if (out_path.empty() || out_path == "-") {
        std::cout << csv;
    } else {
        std::ofstream out(out_path, std::ios::trunc);
        out << csv;
        if (!out.good()) {
            std::cerr << "cannot write " << out_path << "\n";
            return 1;
        }
    }
    return 0;
}

int cmd_serve_gateway(const std::string& listen, const std::string& spool_root,
                      int retention_days, double poll_interval, int batch_size,
                      const std::string& dest, std::int64_t epoch) {
    gateway::SpoolConfig cfg;
    split_host_port(listen, cfg.listen_host, cfg.listen_port);
    cfg.spool_root = spool_root;
    cfg.retention_days = retention_days;
    cfg.poll_interval_s = poll_interval;
    cfg.batch_size = batch_size;
    cfg.epoch_unix = epoch;

    SystemClock clock;
    gateway::SpoolListener listener(cfg, clock);
    listener.start();
    log::info("gateway listening on port " + std::to_string(listener.port()));

    std::optional<gateway::TcpPushChannel> channel;
    std::optional<gateway::Distributor> distributor;
    if (!dest.empty()) {
        std::string host;
        std::uint16_t port;
        split_host_port(dest, host, port);
        channel.emplace(host, port);
        distributor.emplace(cfg, *channel, clock);
        distributor->start();
    }
    const int rc = wait_for_stop();
    if (distributor) distributor->stop();
    listener.stop();
    return rc;
}

int cmd_serve_ingest(const std::string& listen, const std::string& inbox,
                     const std::string& archive_dir, const std::string& settings_file) {
    ingest::Settings settings = ingest::Settings::defaults();
    if (!settings_file.empty()) settings = ingest::Settings::parse(read_file(settings_file));
    ingest::Historian historian(archive_dir, settings);
    std::string host;
    std::uint16_t port;
    split_host_port(listen, host, port);
    ingest::FileReceiver receiver(host, port, inbox, historian);
    receiver.start();
    log::info("ingest listening on port " + std::to_string(receiver.port()));
    const int rc = wait_for_stop();
    receiver.stop();
    historian.flush_all();
    return rc;
}

int cmd_query(const std::string& archive_dir, const std::string& stream_spec, double from,
              double to, double interval, bool raw, const std::string& out_path) {
    const auto colon = stream_spec.find(':');
    if (colon == std::string::npos) {
        std::cerr << "stream must be DEVICE:NAME, e.g. 1:temp\n";
        return 1;
    }
    ingest::StreamKey key{static_cast<std::uint16_t>(std::stoi(stream_spec.substr(0, colon))),
                          stream_spec.substr(colon + 1)};
    ingest::Historian historian(archive_dir, ingest::Settings::defaults());
    std::string csv;
    char buf[80];
    try {
        if (raw) {
            for (const auto& p : historian.query_raw(key, from, to)) {
                std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", p.t, p.v);
                csv += buf;
            }
        } else {
            for (const auto& [t, v] : historian.query_interpolated(key, from, to, interval)) {
                if (v)
                    std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", t, *v);
                else
                    std::snprintf(buf, sizeof buf, "%.6f,\n", t);
                csv += buf;
            }
        }
    } catch (const ingest::UnknownStream& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    if (out_path.empty() || out_path == "-") {
        std::cout << csv;
    } else {
        std::ofstream out(out_path, std::ios::trunc);
        out << csv;
        if (!out.good()) {
            std::cerr << "cannot write " << out_path << "\n";
            return 1;
        }
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"telemote: sensor-to-historian telemetry chain twin"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string log_level = "silent";
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("--log-level", log_level, "silent|info|debug")->capture_default_str();
    app.add_option("--config", config_path, "scenario config file");
    app.add_option("--seed", seed, "override the RNG seed")->each([&](const std::string&) {
        seed_set = true;
    });

    // simulate
    auto* sim = app.add_subcommand("simulate", "run nodes + gateway + ingest end to end");
    scenario::ScenarioConfig cfg;
    bool distributed = false;
    bool zero_dev = false;
    bool wall = false;
    std::uint16_t gw_port = 17760, in_port = 17761;
    std::string workdir;
    int nodes = -1;
    long duration = -1, sample = -1, report = -1;
    sim->add_option("--nodes", nodes, "override node count");
    sim->add_option("--duration", duration, "override duration (virtual s)");
    sim->add_option("--sample-interval", sample, "override sample interval (s)");
    sim->add_option("--report-interval", report, "override report interval (s)");
    sim->add_option("--workdir", workdir, "working directory for spool/inbox/archive");
    sim->add_flag("--zero-deviation", zero_dev, "ingest with all deviations zeroed");
    sim->add_flag("--distributed", distributed, "run gateway and ingest as separate processes");
    sim->add_flag("--wall-clock", wall, "pin virtual time to wall time");
    sim->add_option("--gateway-port", gw_port, "gateway port for --distributed");
    sim->add_option("--ingest-port", in_port, "ingest port for --distributed");

    // power-surface
    auto* surf = app.add_subcommand("power-surface", "export the battery-lifetime surface");
    std::string samples_csv = "1,2,5,10,20,30,60";
    std::string reports_csv = "15,30,60,120,300,600,1800,3600";
    std::string surf_out;
    surf->add_option("--samples", samples_csv, "sample intervals, comma-separated s")
        ->capture_default_str();
    surf->add_option("--reports", reports_csv, "report intervals, comma-separated s")
        ->capture_default_str();
    surf->add_option("--out", surf_out, "output file (default stdout)");

    // serve-gateway
    auto* gw = app.add_subcommand("serve-gateway", "run the spool gateway service");
    std::string gw_listen = "0.0.0.0:7760", gw_spool, gw_dest;
    int gw_retention = 10, gw_batch = 50;
    double gw_poll = 30.0;
    std::int64_t gw_epoch = 0;
    gw->add_option("--listen", gw_listen, "listen HOST:PORT")->capture_default_str();
    gw->add_option("--spool-root", gw_spool, "spool directory")->required();
    gw->add_option("--retention-days", gw_retention, "day-directory retention")
        ->capture_default_str();
    gw->add_option("--poll-interval", gw_poll, "distributor poll interval (s)")
        ->capture_default_str();
    gw->add_option("--batch-size", gw_batch, "max files per distribution round")
        ->capture_default_str();
    gw->add_option("--dest", gw_dest, "ingest HOST:PORT (omit to disable forwarding)");
    gw->add_option("--epoch", gw_epoch, "unix offset added to message timestamps");

    // serve-ingest
    auto* ing = app.add_subcommand("serve-ingest", "run the historian service");
    std::string in_listen = "0.0.0.0:7761", in_inbox = "inbox", in_archive, in_settings;
    ing->add_option("--listen", in_listen, "listen HOST:PORT")->capture_default_str();
    ing->add_option("--inbox", in_inbox, "received-file directory")->capture_default_str();
    ing->add_option("--archive-dir", in_archive, "archive directory")->required();
    ing->add_option("--settings-file", in_settings, "per-stream compression settings");

    // query / export
    auto* q = app.add_subcommand("query", "query the archive");
    std::string q_archive, q_stream, q_out;
    double q_from = 0, q_to = 0, q_interval = 60;
    bool q_raw = false;
    q->add_option("--archive-dir", q_archive, "archive directory")->required();
    q->add_option("--stream", q_stream, "stream as DEVICE:NAME, e.g. 1:temp")->required();
    q->add_option("--from", q_from, "window start (unix s)")->required();
    q->add_option("--to", q_to, "window end (unix s)")->required();
    q->add_option("--interval", q_interval, "interpolation step (s)")->capture_default_str();
    q->add_flag("--raw", q_raw, "compressed raw points instead of interpolation");
    q->add_option("--out", q_out, "output file (default stdout)");

    auto* ex = app.add_subcommand("export", "query the archive into a file");
    std::string e_archive, e_stream, e_out;
    double e_from = 0, e_to = 0, e_interval = 60;
    bool e_raw = false;
    ex->add_option("--archive-dir", e_archive, "archive directory")->required();
    ex->add_option("--stream", e_stream, "stream as DEVICE:NAME")->required();
    ex->add_option("--from", e_from, "window start (unix s)")->required();
    ex->add_option("--to", e_to, "window end (unix s)")->required();
    ex->add_option("--interval", e_interval, "interpolation step (s)")->capture_default_str();
    ex->add_flag("--raw", e_raw, "compressed raw points instead of interpolation");
    ex->add_option("--out", e_out, "output file")->required();

    CLI11_PARSE(app, argc, argv);

    if (log_level == "info")
        log::set_level(log::Level::Info);
    else if (log_level == "debug")
        log::set_level(log::Level::Debug);
    else if (log_level != "silent") {
        std::cerr << "unknown log level " << log_level << "\n";
        return 1;
    }

    try {
        if (sim->parsed()) {
            if (!config_path.empty()) cfg = scenario::parse_config(read_file(config_path));
            if (seed_set) cfg.seed = seed;
            if (nodes >= 0) cfg.nodes = nodes;
            if (duration >= 0) cfg.duration_s = static_cast<std::uint32_t>(duration);
            if (sample >= 0) cfg.sample_interval_s = static_cast<std::uint32_t>(sample);
            if (report >= 0) cfg.report_interval_s = static_cast<std::uint32_t>(report);
            if (!workdir.empty()) cfg.workdir = workdir;
            if (zero_dev) cfg.zero_deviation = true;
            if (wall) cfg.wall_clock = true;
            if (cfg.workdir.empty())
                cfg.workdir = fs::temp_directory_path() /
                              ("telemote_run_" + std::to_string(::getpid()));
            return distributed ? cmd_simulate_distributed(cfg, gw_port, in_port)
                               : cmd_simulate(cfg);
        }
        if (surf->parsed()) return cmd_power_surface(samples_csv, reports_csv, surf_out);
        if (gw->parsed())
            return cmd_serve_gateway(gw_listen, gw_spool, gw_retention, gw_poll, gw_batch,
                                     gw_dest, gw_epoch);
        if (ing->parsed()) return cmd_serve_ingest(in_listen, in_inbox, in_archive, in_settings);
        if (q->parsed())
            return cmd_query(q_archive, q_stream, q_from, q_to, q_interval, q_raw, q_out);
        if (ex->parsed())
            return cmd_query(e_archive, e_stream, e_from, e_to, e_interval, e_raw, e_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
