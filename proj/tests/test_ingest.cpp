#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "telemote/gateway.hpp"
#include "telemote/ingest.hpp"
#include "telemote/net.hpp"
#include "telemote/wire.hpp"

using namespace telemote;
using namespace telemote::ingest;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    const fs::path p =
        fs::temp_directory_path() / ("telemote_ing_" + tag + "_" + std::to_string(rng()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<std::uint8_t> dir_fingerprint(const fs::path& dir) {
    std::vector<std::uint8_t> all;
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        const std::string name = f.filename().string();
        all.insert(all.end(), name.begin(), name.end());
        std::ifstream in(f, std::ios::binary);
        all.insert(all.end(), std::istreambuf_iterator<char>(in), {});
    }
    return all;
}

} // namespace

TEST_CASE("flat-file parsing handles every line type and collects errors") {
    const auto parsed = parse_flat_file(
        "E,5,1000,OCC,1\n"
        "S,3,2000,23.47,45.12,543,0.012,-0.034,0.981,50.2\n"
        "this is garbage\n"
        "E,7,3000,ORI,z,-\n"
        "E,7,4000,ORI,q,-\n");
    REQUIRE(parsed.records.size() == 3);
    REQUIRE(parsed.errors.size() == 2);
    CHECK(parsed.errors[0].line_no == 3);
    CHECK(parsed.errors[1].line_no == 5);

    const auto& occ = std::get<OccRecord>(parsed.records[0]);
    CHECK(occ.device_id == 5);
    CHECK(occ.timestamp == 1000.0);
    CHECK(occ.state == 1);

    const auto& s = std::get<SampleRecord>(parsed.records[1]);
    CHECK(s.device_id == 3);
    CHECK(s.temperature_c == doctest::Approx(23.47));
    CHECK(s.humidity_pct == doctest::Approx(45.12));
    CHECK(s.lux == doctest::Approx(543));
    CHECK(s.accel_g[1] == doctest::Approx(-0.034));
    CHECK(s.occupancy_pct == doctest::Approx(50.2));

    const auto& ori = std::get<OriRecord>(parsed.records[2]);
    CHECK(ori.axis == 2);
    CHECK(ori.sign == -1);
}

TEST_CASE("parsed values round-trip through line formatting") {
    wire::SensorMessage msg;
    msg.device_id = 3;
    msg.timestamp = 2000;
    msg.payload = wire::Sample{2347, 4512, 543, {12, -34, 981}, 128};
    const std::string line = gateway::message_to_line(msg, 0);
    const auto parsed = parse_flat_file(line + "\n");
    REQUIRE(parsed.errors.empty());
    REQUIRE(parsed.records.size() == 1);
    const auto& s = std::get<SampleRecord>(parsed.records.at(0));
    CHECK(s.temperature_c == doctest::Approx(23.47).epsilon(1e-12));
    CHECK(s.humidity_pct == doctest::Approx(45.12).epsilon(1e-12));
    CHECK(s.accel_g[2] == doctest::Approx(0.981).epsilon(1e-12));
    CHECK(s.occupancy_pct == doctest::Approx(128 * 100.0 / 255.0).epsilon(1e-3));
}

TEST_CASE("an S line fans out into the 7 sample streams") {
    Historian hist(fresh_dir("fanout"), Settings::zero_deviation());
    hist.ingest_text("S,3,2000,23.47,45.12,543,0.012,-0.034,0.981,50.2\n");
    const auto streams = hist.streams();
    REQUIRE(streams.size() == 7);
    const char* expected[] = {"ax", "ay", "az", "lux", "occ_pct", "rh", "temp"};
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(streams[i].device_id == 3);
        CHECK(streams[i].stream == expected[i]);
        CHECK(hist.archived_count(streams[i]) == 1);
    }
}

TEST_CASE("exception filter semantics") {
    StreamSettings cfg{0.5, 3600, 0, 3600};
    ExceptionFilter f;
    using V = ExceptionFilter::Verdict;

    SUBCASE("first point always passes; deadband absorbs small moves") {
        CHECK(f.offer({0, 10.0}, cfg) == V::Pass);
        CHECK(f.offer({1, 10.4}, cfg) == V::DropDeadband);
        CHECK(f.offer({2, 10.5}, cfg) == V::DropDeadband); // boundary: not strictly greater
        CHECK(f.offer({3, 10.51}, cfg) == V::Pass);
        CHECK(f.offer({4, 10.2}, cfg) == V::DropDeadband); // relative to last passed (10.51)
    }
    SUBCASE("zero deadband passes every new timestamp, even equal values") {
        StreamSettings zero{0, 3600, 0, 3600};
        CHECK(f.offer({0, 5}, zero) == V::Pass);
        CHECK(f.offer({1, 5}, zero) == V::Pass);
        CHECK(f.offer({2, 5}, zero) == V::Pass);
    }
    SUBCASE("the heartbeat forces a pass on a constant series") {
        StreamSettings hb{0.5, 3600, 0, 3600};
        int passed = 0;
        for (int t = 0; t <= 7200; t += 60)
            if (f.offer({static_cast<double>(t), 42.0}, hb) == V::Pass) ++passed;
        CHECK(passed == 3); // t = 0, 3600, 7200
    }
    SUBCASE("re-sent data: duplicates silent, conflicts counted, stale dropped") {
        CHECK(f.offer({10, 1.0}, cfg) == V::Pass);
        CHECK(f.offer({10, 1.0}, cfg) == V::DropDuplicate);
        CHECK(f.offer({10, 2.0}, cfg) == V::DropConflict);
        CHECK(f.offer({9, 1.0}, cfg) == V::DropStale);
        CHECK(f.offer({11, 9.0}, cfg) == V::Pass);
    }
}

TEST_CASE("swinging door: zero deviation archives everything, even collinear data") {
    SwingingDoor door;
    StreamSettings cfg{0, 3600, 0, 3600};
    int archived = 0;
    for (int i = 0; i < 50; ++i) archived += static_cast<int>(door.offer({1.0 * i, 2.0 * i}, cfg).size());
    CHECK(archived == 50);
    CHECK_FALSE(door.flush().has_value());
}

TEST_CASE("swinging door: an exact linear ramp compresses to its endpoints") {
    SwingingDoor door;
    StreamSettings cfg{0, 3600, 0.5, 1e18};
    std::vector<Point> archived;
    for (int i = 0; i < 100; ++i)
        for (const auto& p : door.offer({1.0 * i, 3.0 + 0.25 * i}, cfg)) archived.push_back(p);
    if (auto h = door.flush()) archived.push_back(*h);
    REQUIRE(archived.size() == 2);
    CHECK(archived[0] == Point{0, 3.0});
    CHECK(archived[1] == Point{99, 3.0 + 0.25 * 99});
}

TEST_CASE("swinging door: non-monotonic timestamps are rejected and counted") {
    SwingingDoor door;
    StreamSettings cfg{0, 3600, 0.5, 3600};
    door.offer({10, 1}, cfg);
    door.offer({11, 2}, cfg);
    CHECK(door.offer({11, 3}, cfg).empty());
    CHECK(door.offer({5, 3}, cfg).empty());
    CHECK(door.rejected() == 2);
}

TEST_CASE("swinging door: comp_max_s bounds the archive gap") {
    SwingingDoor door;
    StreamSettings cfg{0, 3600, 1.0, 1000};
    std::vector<Point> archived;
    for (int i = 0; i <= 10; ++i)
        for (const auto& p : door.offer({400.0 * i, 5.0}, cfg)) archived.push_back(p);
    if (auto h = door.flush()) archived.push_back(*h);
    REQUIRE(archived.size() >= 3);
    for (std::size_t i = 1; i < archived.size(); ++i)
        CHECK(archived[i].t - archived[i - 1].t <= 1000 + 400);
}

TEST_CASE("swinging door: seeded random walks reconstruct within comp_dev") {
    std::mt19937_64 rng(0x5D7);
    for (double dev : {0.1, 0.5, 2.0}) {
        SwingingDoor door;
        StreamSettings cfg{0, 3600, dev, 1e18};
        std::vector<Point> original, archived;
        double v = 10.0;
        for (int i = 0; i < 1000; ++i) {
            v += ((rng() >> 11) * 0x1.0p-53 - 0.5) * dev;
            original.push_back({1.0 * i, v});
            for (const auto& p : door.offer(original.back(), cfg)) archived.push_back(p);
        }
        if (auto h = door.flush()) archived.push_back(*h);
        REQUIRE(archived.size() >= 2);
        CHECK(archived.size() < original.size()); // actually compresses a random walk

        // brute-force reconstruction oracle
        for (const auto& o : original) {
            auto it = std::lower_bound(archived.begin(), archived.end(), o.t,
                                       [](const Point& p, double t) { return p.t < t; });
            double value;
            if (it != archived.end() && it->t == o.t) {
                value = it->v;
            } else {
                REQUIRE(it != archived.begin());
                REQUIRE(it != archived.end());
                const Point& b = *it;
                const Point& a = *std::prev(it);
                value = a.v + (b.v - a.v) * (o.t - a.t) / (b.t - a.t);
            }
            CHECK(std::abs(value - o.v) <= dev + 1e-9);
        }
    }
}

TEST_CASE("archived point count is non-increasing in both deviations") {
    std::mt19937_64 rng(0xAB);
    std::string file;
    double v = 20.0;
    for (int i = 0; i < 500; ++i) {
        v += ((rng() >> 11) * 0x1.0p-53 - 0.5) * 0.2;
        char line[128];
        std::snprintf(line, sizeof line, "S,1,%d,%.3f,50.00,300,0.000,0.000,1.000,0.0\n", 10 * i, v);
        file += line;
    }
    auto archived_with = [&](double exc, double comp) {
        Settings s = Settings::zero_deviation();
        s.per_stream["temp"] = {exc, 1e18, comp, 1e18};
        Historian h(fresh_dir("dom"), s);
        h.ingest_text(file);
        h.flush_all();
        return h.archived_count({1, "temp"});
    };
    const auto base = archived_with(0, 0);
    CHECK(base == 500);
    CHECK(archived_with(0.05, 0) <= base);
    CHECK(archived_with(0, 0.1) <= base);
    CHECK(archived_with(0.05, 0.1) <= archived_with(0.05, 0));
    CHECK(archived_with(0.2, 0.1) <= archived_with(0.05, 0.1));
}

TEST_CASE("ingesting the same file twice leaves the archive byte-identical") {
    const auto dir = fresh_dir("idem");
    const std::string file =
        "S,1,100,22.00,50.00,300,0.000,0.000,1.000,0.0\n"
        "S,1,110,22.10,50.10,301,0.001,0.000,1.000,0.0\n"
        "S,1,120,22.20,50.00,300,0.000,0.000,1.000,0.0\n"
        "E,1,115,OCC,1\n";
    Historian hist(dir, Settings::defaults());
    hist.ingest_text(file);
    const auto once = dir_fingerprint(dir);
    const auto stats = hist.ingest_text(file);
    CHECK(dir_fingerprint(dir) == once);
    CHECK(stats.points_archived == 0);
    // re-offered points are absorbed as stale, duplicate, or deadband drops
    CHECK(stats.stale_dropped + stats.duplicates_dropped + stats.deadband_dropped ==
          stats.points_offered);
    CHECK(stats.conflicts == 0);

    SUBCASE("also across a flush and a fresh historian (restart)") {
        hist.flush_all();
        const auto flushed = dir_fingerprint(dir);
        Historian again(dir, Settings::defaults());
        again.ingest_text(file);
        again.flush_all();
        CHECK(dir_fingerprint(dir) == flushed);
    }
}

TEST_CASE("archive appends durably and tolerates torn tails") {
    const auto dir = fresh_dir("arch");
    const fs::path file = dir / "1_temp.bin";
    {
        StreamArchive a(file);
        a.append({1, 10});
        a.flush();
        const auto size_1 = fs::file_size(file);
        a.append({2, 20});
        a.flush();
        CHECK(fs::file_size(file) - size_1 == 16);
        CHECK_THROWS_AS(a.append({2, 30}), std::invalid_argument);
        a.append({3, 30});
        a.append({4, 40});
        a.append({5, 50});
        a.flush();
    }
    const auto full = [&] {
        std::ifstream in(file, std::ios::binary);
        return std::vector<char>(std::istreambuf_iterator<char>(in), {});
    }();
    REQUIRE(full.size() == 5 * 16);

    for (std::size_t cut = 0; cut <= full.size(); ++cut) {
        const fs::path trial = dir / "trial.bin";
        std::ofstream(trial, std::ios::binary | std::ios::trunc)
            .write(full.data(), static_cast<std::streamsize>(cut));
        StreamArchive a(trial);
        CHECK(a.points().size() == cut / 16); // whole records only
        for (std::size_t i = 0; i < a.points().size(); ++i)
            CHECK(a.points()[i] == Point{static_cast<double>(i + 1), static_cast<double>(10 * (i + 1))});
        // the repaired file accepts further appends
        a.append({100, 1});
        fs::remove(trial);
    }
}

TEST_CASE("interpolated queries bracket linearly, never extrapolate") {
    const auto dir = fresh_dir("interp");
    Historian hist(dir, Settings::zero_deviation());
    hist.ingest_text(
        "S,1,0,10.00,50.00,300,0.000,0.000,1.000,0.0\n"
        "S,1,10,20.00,50.00,300,0.000,0.000,1.000,0.0\n");
    const StreamKey key{1, "temp"};

    const auto rows = hist.query_interpolated(key, 0, 10, 5);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].second == 10.0);  // exact archived timestamp
    CHECK(rows[1].second == 15.0);  // midpoint
    CHECK(rows[2].second == 20.0);

    const auto outside = hist.query_interpolated(key, -10, 20, 10);
    REQUIRE(outside.size() == 4);
    CHECK_FALSE(outside[0].second.has_value()); // before first point
    CHECK(outside[1].second == 10.0);
    CHECK(outside[2].second == 20.0);
    CHECK_FALSE(outside[3].second.has_value()); // after last point

    CHECK_THROWS_AS(hist.query_interpolated(key, 10, 0, 5), std::invalid_argument);
    CHECK_THROWS_AS(hist.query_interpolated(key, 0, 10, 0), std::invalid_argument);
}

TEST_CASE("interpolation property: archived timestamps exact, brackets bounded") {
    std::mt19937_64 rng(0x1111);
    const auto dir = fresh_dir("interp2");
    Historian hist(dir, Settings::zero_deviation());
    std::string file;
    double t = 0;
    for (int i = 0; i < 60; ++i) {
        t += 1 + static_cast<double>(rng() % 20);
        char line[128];
        std::snprintf(line, sizeof line, "S,1,%.0f,%.2f,50.00,300,0.000,0.000,1.000,0.0\n", t,
                      15.0 + (rng() % 1000) / 100.0);
        file += line;
    }
    hist.ingest_text(file);
    const StreamKey key{1, "temp"};
    const auto pts = hist.query_raw(key, 0, 1e18);
    for (const auto& p : pts) {
        const auto rows = hist.query_interpolated(key, p.t, p.t, 1);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].second == p.v);
    }
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const double mid = (pts[i - 1].t + pts[i].t) / 2;
        const auto rows = hist.query_interpolated(key, mid, mid, 1);
        REQUIRE(rows[0].second.has_value());
        CHECK(*rows[0].second >= std::min(pts[i - 1].v, pts[i].v) - 1e-9);
        CHECK(*rows[0].second <= std::max(pts[i - 1].v, pts[i].v) + 1e-9);
    }
}

TEST_CASE("raw queries return the archived range; unknown streams list what exists") {
    const auto dir = fresh_dir("raw");
    Historian hist(dir, Settings::zero_deviation());
    hist.ingest_text(
        "S,1,10,10.00,50.00,300,0.000,0.000,1.000,0.0\n"
        "S,1,20,20.00,50.00,300,0.000,0.000,1.000,0.0\n"
        "S,1,30,30.00,50.00,300,0.000,0.000,1.000,0.0\n");
    const StreamKey key{1, "temp"};
    CHECK(hist.query_raw(key, 31, 100).empty());
    CHECK(hist.query_raw(key, 0, 1e9).size() == 3);
    CHECK(hist.query_raw(key, 10, 20).size() == 2);
    CHECK(hist.query_raw(key, 11, 19).empty());
    CHECK_THROWS_WITH_AS(hist.query_raw({1, "nope"}, 0, 1), doctest::Contains("known streams"),
                         UnknownStream);
    CHECK_THROWS_WITH_AS(hist.query_raw({1, "nope"}, 0, 1), doctest::Contains("1:temp"),
                         UnknownStream);
}

TEST_CASE("event streams bypass deviation filtering entirely") {
    const auto dir = fresh_dir("events");
    Historian hist(dir, Settings::defaults());
    std::string file;
    for (int i = 0; i < 20; ++i) {
        char line[64];
        std::snprintf(line, sizeof line, "E,1,%d,OCC,%d\n", 100 + i, i % 2);
        file += line;
    }
    hist.ingest_text(file);
    hist.flush_all();
    CHECK(hist.archived_count({1, "occ"}) == 20);
}

TEST_CASE("settings files override the defaults and round-trip") {
    const auto s = Settings::parse("temp.exc_dev=0.5\ntemp.comp_dev=2\n# comment\n\nlux.exc_max_s=60\n");
    CHECK(s.for_stream("temp").exc_dev == 0.5);
    CHECK(s.for_stream("temp").comp_dev == 2.0);
    CHECK(s.for_stream("temp").exc_max_s == 3600); // untouched default
    CHECK(s.for_stream("lux").exc_max_s == 60);
    CHECK(s.for_stream("rh").exc_dev == doctest::Approx(0.2)); // default preserved
    const auto round = Settings::parse(s.serialize());
    CHECK(round.for_stream("temp").exc_dev == 0.5);
    CHECK(round.for_stream("lux").exc_max_s == 60);

    CHECK_THROWS_AS(Settings::parse("nonsense\n"), std::invalid_argument);
    CHECK_THROWS_AS(Settings::parse("temp.bogus=1\n"), std::invalid_argument);
    CHECK_THROWS_AS(Settings::parse("temp.exc_dev=-1\n"), std::invalid_argument);
}

TEST_CASE("receiver: verified pushes land in the inbox and the archive") {
    const auto dir = fresh_dir("recv");
    Historian hist(dir / "archive", Settings::zero_deviation());
    FileReceiver recv("127.0.0.1", 0, dir / "inbox", hist);
    recv.start();
    gateway::TcpPushChannel channel("127.0.0.1", recv.port());

    const std::string body = "S,1,10,22.00,50.00,300,0.000,0.000,1.000,0.0\n";
    const std::vector<std::uint8_t> bytes(body.begin(), body.end());

    SUBCASE("valid push is acknowledged and ingested") {
        CHECK(channel.put("20000101_000000_1_0.txt", bytes));
        CHECK(fs::exists(dir / "inbox" / "20000101_000000_1_0.txt"));
        CHECK(hist.totals().lines == 1);
        CHECK(recv.stats().files_received == 1);
    }
    SUBCASE("a corrupted body is refused and nothing is written") {
        auto stream = net::TcpStream::connect("127.0.0.1", recv.port(), 2000);
        REQUIRE(stream.has_value());
        stream->set_read_timeout(2000);
        std::vector<std::uint8_t> push;
        const std::string name = "x.txt";
        push.push_back(static_cast<std::uint8_t>(name.size()));
        push.push_back(0);
        push.insert(push.end(), name.begin(), name.end());
        const auto len = static_cast<std::uint32_t>(bytes.size());
        for (int i = 0; i < 4; ++i) push.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
        push.insert(push.end(), bytes.begin(), bytes.end());
        const std::uint32_t bad_crc = wire::crc32(bytes) ^ 0xDEADBEEF;
        for (int i = 0; i < 4; ++i) push.push_back(static_cast<std::uint8_t>(bad_crc >> (8 * i)));
        REQUIRE(stream->write_all(push));
        std::uint8_t reply = 0;
        REQUIRE(stream->read_exact({&reply, 1}));
        CHECK(reply == 0x15);
        CHECK_FALSE(fs::exists(dir / "inbox" / "x.txt"));
        CHECK(recv.stats().crc_failures == 1);
        CHECK(hist.totals().lines == 0);
    }
    SUBCASE("path-escaping names are refused") {
        CHECK_FALSE(channel.put("../evil.txt", bytes));
        CHECK_FALSE(channel.put("a/b.txt", bytes));
    }
    SUBCASE("re-pushing an ingested file leaves the archive byte-identical") {
        CHECK(channel.put("f.txt", bytes));
        hist.flush_all();
        const auto before = dir_fingerprint(dir / "archive");
        CHECK(channel.put("f.txt", bytes));
        hist.flush_all();
        CHECK(dir_fingerprint(dir / "archive") == before);
    }
    recv.stop();
}

TEST_CASE("archived count equals offered only when all deviations are zero") {
    std::mt19937_64 rng(0x77);
    std::string file;
    double v = 20;
    for (int i = 0; i < 200; ++i) {
        v += ((rng() >> 11) * 0x1.0p-53 - 0.5) * 0.5;
        char line[128];
        std::snprintf(line, sizeof line, "S,2,%d,%.2f,50.00,300,0.000,0.000,1.000,0.0\n", i * 10, v);
        file += line;
    }
    Historian zero(fresh_dir("cnt0"), Settings::zero_deviation());
    zero.ingest_text(file);
    zero.flush_all();
    CHECK(zero.archived_count({2, "temp"}) == 200);

    Historian dflt(fresh_dir("cnt1"), Settings::defaults());
    dflt.ingest_text(file);
    dflt.flush_all();
    CHECK(dflt.archived_count({2, "temp"}) < 200);
}
