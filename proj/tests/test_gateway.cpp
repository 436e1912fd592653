#include <doctest.h>

#include <filesystem>
#include <functional>
#include <fstream>
#include <random>
#include <atomic>
#include <thread>

#include "telemote/clock.hpp"
#include "telemote/gateway.hpp"
#include "telemote/net.hpp"
#include "telemote/recordstore.hpp"
#include "telemote/wire.hpp"

using namespace telemote;
using namespace telemote::gateway;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    const fs::path p = fs::temp_directory_path() / ("telemote_test_" + tag + "_" +
                                                    std::to_string(rng()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

wire::SensorMessage sample_message(std::uint16_t device, std::uint32_t ts) {
    wire::SensorMessage msg;
    msg.device_id = device;
    msg.timestamp = ts;
    wire::Sample s;
    s.temperature_cc = 2347;
    s.humidity_crh = 4512;
    s.illuminance_lux = 543;
    s.accel_mg = {12, -34, 981};
    s.occupancy_fraction = 128;
    msg.payload = s;
    return msg;
}

std::vector<std::uint8_t> build_session(std::uint16_t device,
                                        const std::vector<wire::SensorMessage>& messages) {
    recordstore::RecordStore store(1 << 15);
    for (const auto& m : messages) store.append(wire::encode_message(m));
    std::vector<std::uint8_t> session;
    auto add = [&](std::span<const std::uint8_t> payload) {
        const auto f = wire::frame_encode(payload);
        session.insert(session.end(), f.begin(), f.end());
    };
    add(wire::make_hello(device, wire::kProtocolVersion,
                         static_cast<std::uint16_t>(store.record_count())));
    for (const auto& r : store.records()) add(r);
    add(wire::make_end(static_cast<std::uint16_t>(store.record_count())));
    return session;
}

/// Sends raw bytes as one report connection; returns true when ACKed.
bool push_session(std::uint16_t port, std::span<const std::uint8_t> bytes) {
    auto s = net::TcpStream::connect("127.0.0.1", port, 2000);
    REQUIRE(s.has_value());
    s->set_read_timeout(2000);
    REQUIRE(s->write_all(bytes));
    s->shutdown_write();
    std::uint8_t ack = 0;
    if (!s->read_exact({&ack, 1})) return false;
    return ack == wire::kAck;
}

std::vector<std::string> read_lines(const fs::path& file) {
    std::ifstream in(file);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

std::vector<fs::path> files_under(const fs::path& root, const std::string& suffix) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename().string().ends_with(suffix))
            out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

class MockChannel final : public TransferChannel {
public:
    std::vector<std::pair<std::string, std::vector<std::uint8_t>>> received;
    std::function<bool(int)> script; // by call index; default succeed

    bool put(const std::string& name, std::span<const std::uint8_t> body) override {
        const int idx = calls_++;
        if (script && !script(idx)) return false;
        received.emplace_back(name, std::vector<std::uint8_t>(body.begin(), body.end()));
        return true;
    }

private:
    int calls_ = 0;
};

SpoolConfig test_config(const fs::path& root) {
    SpoolConfig cfg;
    cfg.spool_root = root;
    cfg.listen_port = 0;
    return cfg;
}

void write_spool_file(const fs::path& root, const std::string& day, const std::string& name,
                      const std::string& content) {
    fs::create_directories(root / day);
    std::ofstream(root / day / name) << content;
}

} // namespace

TEST_CASE("flat-file line formats") {
    CHECK(message_to_line(sample_message(5, 1000), 0) ==
          "S,5,1000,23.47,45.12,543,0.012,-0.034,0.981,50.2");
    wire::SensorMessage occ;
    occ.device_id = 5;
    occ.timestamp = 1000;
    occ.payload = wire::OccEvent{1};
    CHECK(message_to_line(occ, 0) == "E,5,1000,OCC,1");
    wire::SensorMessage ori;
    ori.device_id = 7;
    ori.timestamp = 2000;
    ori.payload = wire::OriEvent{2, -1};
    CHECK(message_to_line(ori, 500) == "E,7,2500,ORI,z,-");
    CHECK(message_to_line(sample_message(5, 1000), 946684800)
              .starts_with("S,5,946685800,"));
}

TEST_CASE("one connection becomes one spool file with one line per message") {
    const auto root = fresh_dir("listen");
    SimClock clock(946684800); // 2000-01-01 00:00:00
    SpoolListener listener(test_config(root), clock);
    listener.start();

    std::vector<wire::SensorMessage> messages;
    for (std::uint32_t i = 0; i < 60; ++i) messages.push_back(sample_message(3, 10 * (i + 1)));
    CHECK(push_session(listener.port(), build_session(3, messages)));
    listener.stop();

    const auto files = files_under(root, ".txt");
    REQUIRE(files.size() == 1);
    CHECK(files[0].parent_path().filename() == "20000101");
    CHECK(files[0].filename().string().starts_with("000000_3_"));
    const auto lines = read_lines(files[0]);
    REQUIRE(lines.size() == 60);
    for (const auto& l : lines) CHECK(l.starts_with("S,3,"));
    const auto st = listener.stats();
    CHECK(st.connections == 1);
    CHECK(st.files_written == 1);
    CHECK(st.lines_written == 60);
    CHECK(st.frames_dropped == 0);
    CHECK(st.records_dropped == 0);
}

TEST_CASE("a session with no messages is acknowledged but writes no file") {
    const auto root = fresh_dir("empty");
    SimClock clock(946684800);
    SpoolListener listener(test_config(root), clock);
    listener.start();
    CHECK(push_session(listener.port(), build_session(9, {})));
    listener.stop();
    CHECK(files_under(root, ".txt").empty());
    CHECK(listener.stats().files_written == 0);
}

TEST_CASE("a connection without a valid hello is rejected") {
    const auto root = fresh_dir("nohello");
    SimClock clock(946684800);
    SpoolListener listener(test_config(root), clock);
    listener.start();
    // leading frame is a record, not a hello
    std::vector<std::uint8_t> bad;
    const auto f = wire::frame_encode(wire::encode_message(sample_message(1, 10)));
    bad.insert(bad.end(), f.begin(), f.end());
    CHECK_FALSE(push_session(listener.port(), bad));
    listener.stop();
    CHECK(files_under(root, ".txt").empty());
    CHECK(listener.stats().rejected == 1);
}

TEST_CASE("a dropped connection keeps the decoded prefix without acknowledging") {
    const auto root = fresh_dir("prefix");
    SimClock clock(946684800);
    SpoolListener listener(test_config(root), clock);
    listener.start();
    {
        auto full = build_session(4, {sample_message(4, 10), sample_message(4, 20),
                                      sample_message(4, 30)});
        // cut the END frame (3-byte payload + crc + delimiter = 6 bytes) plus a bit
        full.resize(full.size() - 10);
        auto s = net::TcpStream::connect("127.0.0.1", listener.port(), 2000);
        REQUIRE(s.has_value());
        REQUIRE(s->write_all(full));
        s->shutdown_write();
        std::uint8_t ack = 0;
        s->set_read_timeout(2000);
        CHECK(s->read_some({&ack, 1}) <= 0); // no ACK for a partial session
    }
    listener.stop();
    const auto files = files_under(root, ".txt");
    REQUIRE(files.size() == 1);
    CHECK(read_lines(files[0]).size() >= 2); // at least the fully framed prefix
    CHECK(listener.stats().partial_connections == 1);
}

TEST_CASE("files land in their UTC day directory, rolling over at midnight") {
    const auto root = fresh_dir("rollover");
    SimClock clock(946684800 + 86399); // 23:59:59
    SpoolListener listener(test_config(root), clock);
    listener.start();
    CHECK(push_session(listener.port(), build_session(1, {sample_message(1, 10)})));
    clock.set(946684800 + 86401); // 00:00:01 next day
    CHECK(push_session(listener.port(), build_session(1, {sample_message(1, 20)})));
    listener.stop();
    CHECK(fs::exists(root / "20000101"));
    CHECK(fs::exists(root / "20000102"));
    CHECK(files_under(root / "20000101", ".txt").size() == 1);
    CHECK(files_under(root / "20000102", ".txt").size() == 1);
}

TEST_CASE("same second, same device connections get distinct sequence numbers") {
    const auto root = fresh_dir("seq");
    SimClock clock(946684800);
    SpoolListener listener(test_config(root), clock);
    listener.start();
    CHECK(push_session(listener.port(), build_session(2, {sample_message(2, 10)})));
    CHECK(push_session(listener.port(), build_session(2, {sample_message(2, 20)})));
    listener.stop();
    const auto files = files_under(root, ".txt");
    REQUIRE(files.size() == 2);
    CHECK(files[0].filename() == "000000_2_0.txt");
    CHECK(files[1].filename() == "000000_2_1.txt");
}

TEST_CASE("distribute sends unsent files and renames on success only") {
    const auto root = fresh_dir("dist");
    auto cfg = test_config(root);
    write_spool_file(root, "20000101", "010101_1_0.txt", "S,1,1,1.00,1.00,1,0.000,0.000,1.000,0.0\n");
    write_spool_file(root, "20000101", "020202_1_0.txt", "line2\n");
    write_spool_file(root, "20000102", "010101_2_0.txt", "line3\n");

    SUBCASE("healthy channel drains everything") {
        MockChannel channel;
        const auto r = distribute(cfg, channel);
        CHECK(r.files_sent == 3);
        CHECK(r.files_failed == 0);
        CHECK(r.backlog_after == 0);
        CHECK(files_under(root, ".txt").empty());
        CHECK(files_under(root, ".sent").size() == 3);
        // oldest first, day-prefixed transfer names
        REQUIRE(channel.received.size() == 3);
        CHECK(channel.received[0].first == "20000101_010101_1_0.txt");
        CHECK(channel.received[1].first == "20000101_020202_1_0.txt");
        CHECK(channel.received[2].first == "20000102_010101_2_0.txt");
        // a second round has nothing left to send
        MockChannel channel2;
        CHECK(distribute(cfg, channel2).files_sent == 0);
    }
    SUBCASE("a dead channel defers everything untouched") {
        MockChannel channel;
        channel.script = [](int) { return false; };
        const auto r = distribute(cfg, channel);
        CHECK(r.files_sent == 0);
        CHECK(r.files_failed == 1); // first failure aborts the round
        CHECK(r.backlog_after == 3);
        CHECK(files_under(root, ".txt").size() == 3);
        CHECK(files_under(root, ".sent").empty());
    }
    SUBCASE("a mid-batch failure keeps everything after the failure") {
        MockChannel channel;
        channel.script = [](int idx) { return idx < 1; }; // first file only
        const auto r = distribute(cfg, channel);
        CHECK(r.files_sent == 1);
        CHECK(r.files_failed == 1);
        CHECK(r.backlog_after == 2);
        // "crash-restart": a fresh round picks up exactly the remainder
        MockChannel channel2;
        const auto r2 = distribute(cfg, channel2);
        CHECK(r2.files_sent == 2);
        CHECK(channel2.received[0].first == "20000101_020202_1_0.txt");
        CHECK(files_under(root, ".sent").size() == 3);
    }
}

TEST_CASE("backlog drains oldest-first in batch_size rounds") {
    const auto root = fresh_dir("batch");
    auto cfg = test_config(root);
    cfg.batch_size = 10;
    std::vector<std::string> expected;
    for (int i = 0; i < 100; ++i) {
        char day[16], name[32];
        std::snprintf(day, sizeof day, "200001%02d", 1 + i / 20);
        std::snprintf(name, sizeof name, "%06d_1_0.txt", i % 20);
        write_spool_file(root, day, name, "x\n");
        expected.push_back(std::string(day) + "_" + name);
    }
    std::sort(expected.begin(), expected.end());
    MockChannel channel;
    int rounds = 0;
    while (distribute(cfg, channel).backlog_after > 0) ++rounds;
    CHECK(rounds + 1 == 10);
    REQUIRE(channel.received.size() == 100);
    for (std::size_t i = 0; i < 100; ++i) CHECK(channel.received[i].first == expected[i]);
}

TEST_CASE("purge removes exactly the day directories past retention") {
    const auto root = fresh_dir("purge");
    auto cfg = test_config(root);
    cfg.retention_days = 10;
    const std::int64_t now = 946684800 + 40 * 86400;
    const std::int64_t today = date_util::unix_to_days(now);

    SUBCASE("12 trailing days lose the two oldest") {
        for (int age = 0; age < 12; ++age)
            write_spool_file(root, date_util::utc_yyyymmdd((today - age) * 86400), "f.txt.sent",
                             "x\n");
        const auto r = purge(cfg, now);
        CHECK(r.directories_removed == 2);
        CHECK_FALSE(fs::exists(root / date_util::utc_yyyymmdd((today - 11) * 86400)));
        CHECK_FALSE(fs::exists(root / date_util::utc_yyyymmdd((today - 10) * 86400)));
        CHECK(fs::exists(root / date_util::utc_yyyymmdd((today - 9) * 86400)));
    }
    SUBCASE("five recent days survive untouched") {
        for (int age = 0; age < 5; ++age)
            write_spool_file(root, date_util::utc_yyyymmdd((today - age) * 86400), "f.txt.sent",
                             "x\n");
        CHECK(purge(cfg, now).directories_removed == 0);
    }
    SUBCASE("unsent files inside purged directories are counted") {
        write_spool_file(root, date_util::utc_yyyymmdd((today - 10) * 86400), "a.txt", "x\n");
        write_spool_file(root, date_util::utc_yyyymmdd((today - 10) * 86400), "b.txt.sent", "x\n");
        const auto r = purge(cfg, now);
        CHECK(r.directories_removed == 1);
        CHECK(r.unsent_files_dropped == 1);
    }
    SUBCASE("non-day directories are ignored") {
        fs::create_directories(root / "not_a_day");
        CHECK(purge(cfg, now).directories_removed == 0);
        CHECK(fs::exists(root / "not_a_day"));
    }
}

TEST_CASE("distributor saturation counter trips when the backlog grows") {
    const auto root = fresh_dir("saturation");
    auto cfg = test_config(root);
    cfg.batch_size = 1;
    SimClock clock(946684800 + 86400);
    MockChannel channel;
    channel.script = [](int) { return false; }; // throttled: nothing gets through
    Distributor distributor(cfg, channel, clock);
    write_spool_file(root, "20000101", "000001_1_0.txt", "x\n");
    distributor.run_round();
    write_spool_file(root, "20000101", "000002_1_0.txt", "x\n");
    write_spool_file(root, "20000101", "000003_1_0.txt", "x\n");
    distributor.run_round();
    const auto st = distributor.stats();
    CHECK(st.rounds == 2);
    CHECK(st.saturation_events >= 1);
    CHECK(st.files_sent == 0);
}

TEST_CASE("listener survives concurrent connections") {
    const auto root = fresh_dir("concurrent");
    SimClock clock(946684800);
    SpoolListener listener(test_config(root), clock);
    listener.start();
    std::vector<std::thread> threads;
    std::atomic<int> acks{0};
    for (int i = 0; i < 8; ++i) {
        threads.emplace_back([&, i] {
            const auto device = static_cast<std::uint16_t>(i + 1);
            std::vector<wire::SensorMessage> msgs;
            for (std::uint32_t k = 1; k <= 10; ++k) msgs.push_back(sample_message(device, k * 10));
            if (push_session(listener.port(), build_session(device, msgs))) ++acks;
        });
    }
    for (auto& t : threads) t.join();
    listener.stop();
    CHECK(acks == 8);
    CHECK(files_under(root, ".txt").size() == 8);
    CHECK(listener.stats().lines_written == 80);
}
