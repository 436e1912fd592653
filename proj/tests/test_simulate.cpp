#include <doctest.h>

#include <cstdio>
#include <sstream>
#include <sys/wait.h>
#include <filesystem>
#include <fstream>
#include <random>

#include "telemote/scenario.hpp"

using namespace telemote;
using namespace telemote::scenario;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    const fs::path p =
        fs::temp_directory_path() / ("telemote_sim_" + tag + "_" + std::to_string(rng()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ScenarioConfig small_scenario(const std::string& tag) {
    ScenarioConfig cfg;
    cfg.nodes = 2;
    cfg.sample_interval_s = 5;
    cfg.report_interval_s = 60;
    cfg.duration_s = 600;
    cfg.seed = 11;
    cfg.zero_deviation = true;
    cfg.poll_interval_s = 30;
    cfg.workdir = fresh_dir(tag);
    return cfg;
}

std::string run_cli(const std::string& args, int& exit_code) {
    const std::string cmd = std::string(TELEMOTE_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    char buf[512];
    while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
    const int status = pclose(pipe);
    exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return out;
}

} // namespace

TEST_CASE("small loopback scenario conserves every message") {
    auto cfg = small_scenario("base");
    const auto report = run_simulation(cfg);
    REQUIRE(report.nodes.size() == 2);
    for (const auto& n : report.nodes) {
        CHECK(n.samples == 120); // 600 s / 5 s
        CHECK(n.reports_failed == 0);
        CHECK(n.overflow_dropped == 0);
        CHECK(n.buffered_at_end == 0);
    }
    CHECK(report.conservation_ok);
    CHECK(report.gw_frames_dropped == 0);
    CHECK(report.ingest_parse_errors == 0);
    CHECK(report.spool_unsent_at_end == 0);
    CHECK(report.ingest_lines == report.gw_lines_written);
    // zero deviations: every line's points hit the archive; 7 per sample line
    std::uint64_t samples = 0, events = 0;
    for (const auto& n : report.nodes) {
        samples += n.samples;
        events += n.occ_events + n.ori_events;
    }
    CHECK(report.points_archived == samples * 7 + events);
}

TEST_CASE("identical seeds give byte-identical run reports") {
    auto a = small_scenario("det_a");
    auto b = small_scenario("det_b");
    b.seed = a.seed;
    const auto ra = run_simulation(a).to_text();
    const auto rb = run_simulation(b).to_text();
    CHECK(ra == rb);

    auto c = small_scenario("det_c");
    c.seed = a.seed + 1;
    CHECK(run_simulation(c).to_text() != ra);
}

TEST_CASE("a gateway outage defers delivery without losing anything") {
    auto cfg = small_scenario("outage");
    cfg.gateway_down = {{55, 65}}; // swallows the t=60 report tick
    const auto report = run_simulation(cfg);
    std::uint64_t failed = 0;
    for (const auto& n : report.nodes) failed += n.reports_failed;
    CHECK(failed == 2); // one failed report per node
    CHECK(report.conservation_ok);
    for (const auto& n : report.nodes) CHECK(n.buffered_at_end == 0);

    // totals match the fault-free run of the same seed
    auto clean = small_scenario("outage_clean");
    clean.seed = cfg.seed;
    const auto clean_report = run_simulation(clean);
    CHECK(report.points_archived == clean_report.points_archived);
    CHECK(report.ingest_lines == clean_report.ingest_lines);
}

TEST_CASE("a flaky transfer channel still drains by the end of the run") {
    auto cfg = small_scenario("flaky");
    cfg.channel_failure_p = 0.5;
    const auto report = run_simulation(cfg);
    CHECK(report.conservation_ok);
    CHECK(report.spool_unsent_at_end == 0);
    CHECK(report.files_failed > 0);
}

TEST_CASE("zero nodes produce an empty, consistent report") {
    auto cfg = small_scenario("zero");
    cfg.nodes = 0;
    const auto report = run_simulation(cfg);
    CHECK(report.nodes.empty());
    CHECK(report.conservation_ok);
    CHECK(report.points_archived == 0);
    CHECK(report.gw_connections == 0);
}

TEST_CASE("scenario config parsing") {
    const auto cfg = parse_config(
        "[scenario]\n"
        "nodes = 4\n"
        "sample_interval_s = 15\n"
        "report_interval_s = 300\n"
        "duration_s = 1200\n"
        "seed = 99\n"
        "workdir = /tmp/somewhere\n"
        "zero_deviation = on\n"
        "# a comment\n"
        "[env]\n"
        "presence = off\n"
        "[faults]\n"
        "gateway_down = 100..200, 300..310\n"
        "channel_failure_p = 0.25\n"
        "[gateway]\n"
        "batch_size = 7\n"
        "poll_interval_s = 45\n"
        "[ingest]\n"
        "temp.exc_dev = 0.5\n"
        "[node.2]\n"
        "sample_interval_s = 30\n");
    CHECK(cfg.nodes == 4);
    CHECK(cfg.sample_interval_s == 15);
    CHECK(cfg.report_interval_s == 300);
    CHECK(cfg.duration_s == 1200);
    CHECK(cfg.seed == 99);
    CHECK(cfg.workdir == "/tmp/somewhere");
    CHECK(cfg.zero_deviation);
    CHECK_FALSE(cfg.presence);
    REQUIRE(cfg.gateway_down.size() == 2);
    CHECK(cfg.gateway_down[0] == std::pair<std::uint32_t, std::uint32_t>{100, 200});
    CHECK(cfg.gateway_down[1] == std::pair<std::uint32_t, std::uint32_t>{300, 310});
    CHECK(cfg.channel_failure_p == 0.25);
    CHECK(cfg.batch_size == 7);
    CHECK(cfg.poll_interval_s == 45);
    REQUIRE(cfg.ingest_settings.has_value());
    CHECK(cfg.ingest_settings->for_stream("temp").exc_dev == 0.5);
    REQUIRE(cfg.node_overrides.count(2) == 1);
    CHECK(cfg.node_overrides.at(2).sample_interval_s == 30);

    CHECK_THROWS_AS(parse_config("[scenario]\nbogus = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("[what]\nx = 1\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("[scenario]\nnodes\n"), std::invalid_argument);
}

TEST_CASE("per-node overrides take effect") {
    auto cfg = small_scenario("override");
    cfg.node_overrides[2].sample_interval_s = 10;
    const auto report = run_simulation(cfg);
    REQUIRE(report.nodes.size() == 2);
    CHECK(report.nodes[0].samples == 120);
    CHECK(report.nodes[1].samples == 60);
    CHECK(report.conservation_ok);
}

TEST_CASE("cli: simulate exits 0 and prints a conserving report") {
    const auto dir = fresh_dir("cli_sim");
    const fs::path config = dir / "scenario.cfg";
    std::ofstream(config) << "[scenario]\n"
                             "nodes = 1\n"
                             "sample_interval_s = 10\n"
                             "report_interval_s = 60\n"
                             "duration_s = 120\n"
                             "seed = 5\n"
                             "zero_deviation = on\n"
                             "workdir = " << (dir / "run").string() << "\n";
    int exit_code = -1;
    const auto out = run_cli("simulate --config " + config.string(), exit_code);
    CHECK(exit_code == 0);
    CHECK(out.find("conservation: OK") != std::string::npos);
    CHECK(out.find("node 1: samples=12") != std::string::npos);
}

TEST_CASE("cli: query output re-parses to the programmatic results") {
    const auto dir = fresh_dir("cli_query");
    ScenarioConfig cfg = small_scenario("cli_query_run");
    cfg.nodes = 1;
    cfg.workdir = dir;
    const auto report = run_simulation(cfg);
    REQUIRE(report.conservation_ok);

    ingest::Historian hist(dir / "archive", ingest::Settings::defaults());
    const ingest::StreamKey key{1, "temp"};
    const double t0 = 946684800, t1 = 946684800 + 600;
    const auto expected = hist.query_interpolated(key, t0, t1, 60);

    int exit_code = -1;
    char args[512];
    std::snprintf(args, sizeof args,
                  "query --archive-dir %s --stream 1:temp --from %.0f --to %.0f --interval 60",
                  (dir / "archive").c_str(), t0, t1);
    const auto out = run_cli(args, exit_code);
    REQUIRE(exit_code == 0);

    std::istringstream in(out);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        REQUIRE(row < expected.size());
        const auto comma = line.find(',');
        REQUIRE(comma != std::string::npos);
        CHECK(std::stod(line.substr(0, comma)) == doctest::Approx(expected[row].first));
        const std::string value = line.substr(comma + 1);
        if (expected[row].second) {
            CHECK(std::stod(value) == doctest::Approx(*expected[row].second).epsilon(1e-6));
        } else {
            CHECK(value.empty());
        }
        ++row;
    }
    CHECK(row == expected.size());

    // raw mode round-trips the archived points
    const auto raw_pts = hist.query_raw(key, t0, t1);
    std::snprintf(args, sizeof args, "query --archive-dir %s --stream 1:temp --from %.0f --to %.0f --raw",
                  (dir / "archive").c_str(), t0, t1);
    const auto raw_out = run_cli(args, exit_code);
    REQUIRE(exit_code == 0);
    std::istringstream rin(raw_out);
    row = 0;
    while (std::getline(rin, line)) {
        REQUIRE(row < raw_pts.size());
        const auto comma = line.find(',');
        CHECK(std::stod(line.substr(0, comma)) == doctest::Approx(raw_pts[row].t));
        CHECK(std::stod(line.substr(comma + 1)) == doctest::Approx(raw_pts[row].v).epsilon(1e-6));
        ++row;
    }
    CHECK(row == raw_pts.size());

    // unknown streams fail with suggestions
    std::snprintf(args, sizeof args, "query --archive-dir %s --stream 1:nope --from 0 --to 1",
                  (dir / "archive").c_str());
    run_cli(args, exit_code);
    CHECK(exit_code == 1);
}

TEST_CASE("cli: power-surface writes the csv export") {
    const auto dir = fresh_dir("cli_surface");
    int exit_code = -1;
    run_cli("power-surface --samples 10 --reports 60,600 --out " + (dir / "s.csv").string(),
            exit_code);
    CHECK(exit_code == 0);
    std::ifstream in(dir / "s.csv");
    std::string header, row;
    REQUIRE(std::getline(in, header));
    REQUIRE(std::getline(in, row));
    CHECK(header == "sample_s\\report_s,60,600");
    CHECK(row.starts_with("10,5.453,"));
}

TEST_CASE("cli: export requires --out and writes it") {
    const auto dir = fresh_dir("cli_export");
    ScenarioConfig cfg = small_scenario("cli_export_run");
    cfg.nodes = 1;
    cfg.duration_s = 120;
    cfg.workdir = dir;
    run_simulation(cfg);
    int exit_code = -1;
    char args[512];
    std::snprintf(args, sizeof args,
                  "export --archive-dir %s --stream 1:temp --from 946684800 --to 946684920 "
                  "--interval 30 --out %s",
                  (dir / "archive").c_str(), (dir / "out.csv").c_str());
    run_cli(args, exit_code);
    CHECK(exit_code == 0);
    CHECK(fs::exists(dir / "out.csv"));
    run_cli("export --archive-dir x --stream 1:temp --from 0 --to 1", exit_code);
    CHECK(exit_code != 0); // --out is required
}
