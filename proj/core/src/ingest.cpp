#include "telemote/ingest.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>

#include <unistd.h>

#include "telemote/log.hpp"
#include "telemote/wire.hpp"

namespace telemote::ingest {

namespace fs = std::filesystem;

// ---- parsing ----------------------------------------------------------------

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    char buf[64];
    if (s.size() >= sizeof buf) return false;
    std::memcpy(buf, s.data(), s.size());
    buf[s.size()] = '\0';
    char* end = nullptr;
    errno = 0;
    out = std::strtod(buf, &end);
    return errno == 0 && end == buf + s.size() && std::isfinite(out);
}

bool parse_u16(std::string_view s, std::uint16_t& out) {
    unsigned v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || v > 0xFFFF) return false;
    out = static_cast<std::uint16_t>(v);
    return true;
}

} // namespace

ParsedFile parse_flat_file(std::string_view text) {
    ParsedFile out;
    int line_no = 0;
    for (std::string_view line : split(text, '\n')) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        auto fail = [&](const char* reason) {
            out.errors.push_back({line_no, std::string(line), reason});
        };
        const auto fields = split(line, ',');
        if (fields[0] == "S") {
            if (fields.size() != 10) {
                fail("S line needs 10 fields");
                continue;
            }
            SampleRecord r{};
            if (!parse_u16(fields[1], r.device_id) || !parse_double(fields[2], r.timestamp) ||
                !parse_double(fields[3], r.temperature_c) ||
                !parse_double(fields[4], r.humidity_pct) || !parse_double(fields[5], r.lux) ||
                !parse_double(fields[6], r.accel_g[0]) || !parse_double(fields[7], r.accel_g[1]) ||
                !parse_double(fields[8], r.accel_g[2]) ||
                !parse_double(fields[9], r.occupancy_pct)) {
                fail("bad numeric field");
                continue;
            }
            out.records.emplace_back(r);
        } else if (fields[0] == "E") {
            if (fields.size() < 5) {
                fail("E line too short");
                continue;
            }
            std::uint16_t dev;
            double ts;
            if (!parse_u16(fields[1], dev) || !parse_double(fields[2], ts)) {
                fail("bad numeric field");
                continue;
            }
            if (fields[3] == "OCC") {
                if (fields.size() != 5 || (fields[4] != "0" && fields[4] != "1")) {
                    fail("bad OCC event");
                    continue;
                }
                out.records.emplace_back(OccRecord{dev, ts, fields[4] == "1" ? 1 : 0});
            } else if (fields[3] == "ORI") {
                if (fields.size() != 6 || fields[4].size() != 1 || fields[5].size() != 1) {
                    fail("bad ORI event");
                    continue;
                }
                const char axis_c = fields[4][0];
                const char sign_c = fields[5][0];
                if ((axis_c != 'x' && axis_c != 'y' && axis_c != 'z') ||
                    (sign_c != '+' && sign_c != '-')) {
                    fail("bad ORI event");
                    continue;
                }
                out.records.emplace_back(
                    OriRecord{dev, ts, axis_c - 'x', sign_c == '+' ? 1 : -1});
            } else {
                fail("unknown event tag");
            }
        } else {
            fail("unknown line tag");
        }
    }
    return out;
}

// ---- settings ----------------------------------------------------------------

const StreamSettings& Settings::for_stream(const std::string& name) const {
    static const StreamSettings pass_through{};
    const auto it = per_stream.find(name);
    return it == per_stream.end() ? pass_through : it->second;
}

Settings Settings::defaults() {
    Settings s;
    s.per_stream["temp"] = {0.05, 3600, 0.10, 3600};
    s.per_stream["rh"] = {0.20, 3600, 0.50, 3600};
    s.per_stream["lux"] = {2.0, 3600, 5.0, 3600};
    s.per_stream["ax"] = {0.01, 3600, 0.02, 3600};
    s.per_stream["ay"] = {0.01, 3600, 0.02, 3600};
    s.per_stream["az"] = {0.01, 3600, 0.02, 3600};
    s.per_stream["occ_pct"] = {0.5, 3600, 1.0, 3600};
    s.per_stream["occ"] = {0, 3600, 0, 3600}; // events bypass deviation filtering
    s.per_stream["ori"] = {0, 3600, 0, 3600};
    return s;
}

Settings Settings::zero_deviation() {
    Settings s = defaults();
    for (auto& [_, cfg] : s.per_stream) {
        cfg.exc_dev = 0;
        cfg.comp_dev = 0;
    }
    return s;
}

Settings Settings::parse(std::string_view text) {
    Settings s = defaults();
    int line_no = 0;
    for (std::string_view line : split(text, '\n')) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        const auto dot = line.find('.');
        if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq)
            throw std::invalid_argument("settings line " + std::to_string(line_no) +
                                        ": expected stream.param=value");
        const std::string stream(line.substr(0, dot));
        const std::string param(line.substr(dot + 1, eq - dot - 1));
        double value;
        if (!parse_double(line.substr(eq + 1), value) || value < 0)
            throw std::invalid_argument("settings line " + std::to_string(line_no) +
                                        ": bad value");
        auto& cfg = s.per_stream[stream];
        if (param == "exc_dev")
            cfg.exc_dev = value;
        else if (param == "exc_max_s")
            cfg.exc_max_s = value;
        else if (param == "comp_dev")
            cfg.comp_dev = value;
        else if (param == "comp_max_s")
            cfg.comp_max_s = value;
        else
            throw std::invalid_argument("settings line " + std::to_string(line_no) +
                                        ": unknown parameter " + param);
    }
    return s;
}

std::string Settings::serialize() const {
    std::string out;
    char buf[96];
    for (const auto& [name, cfg] : per_stream) {
        std::snprintf(buf, sizeof buf, "%s.exc_dev=%g\n%s.exc_max_s=%g\n%s.comp_dev=%g\n%s.comp_max_s=%g\n",
                      name.c_str(), cfg.exc_dev, name.c_str(), cfg.exc_max_s, name.c_str(),
                      cfg.comp_dev, name.c_str(), cfg.comp_max_s);
        out += buf;
    }
    return out;
}

// ---- exception filter ----------------------------------------------------------

ExceptionFilter::Verdict ExceptionFilter::offer(const Point& p, const StreamSettings& s) {
    if (!last_) {
        last_ = p;
        return Verdict::Pass;
    }
    if (p.t < last_->t) return Verdict::DropStale;
    if (p.t == last_->t) return p.v == last_->v ? Verdict::DropDuplicate : Verdict::DropConflict;
    if (s.exc_dev <= 0 || std::abs(p.v - last_->v) > s.exc_dev ||
        (p.t - last_->t) >= s.exc_max_s) {
        last_ = p;
        return Verdict::Pass;
    }
    return Verdict::DropDeadband;
}

// ---- swinging door --------------------------------------------------------------

std::vector<Point> SwingingDoor::offer(const Point& p, const StreamSettings& s) {
    std::vector<Point> out;
    if ((archived_ && p.t <= archived_->t) || (held_ && p.t <= held_->t)) {
        ++rejected_;
        return out;
    }
    if (s.comp_dev <= 0) { // compression off
        if (held_) {
            out.push_back(*held_);
            held_.reset();
        }
        out.push_back(p);
        archived_ = p;
        return out;
    }
    if (!archived_) {
        out.push_back(p);
        archived_ = p;
        return out;
    }
    auto restart_from = [&](const Point& a) -> bool {
        // Returns false when p itself must be archived (gap overrun).
        if (p.t - a.t > s.comp_max_s) return false;
        const double dt = p.t - a.t;
        slope_max_ = (p.v + s.comp_dev - a.v) / dt;
        slope_min_ = (p.v - s.comp_dev - a.v) / dt;
        held_ = p;
        return true;
    };
    if (!held_) {
        if (!restart_from(*archived_)) {
            out.push_back(p);
            archived_ = p;
        }
        return out;
    }
    const double dt = p.t - archived_->t;
    const double hi = (p.v + s.comp_dev - archived_->v) / dt;
    const double lo = (p.v - s.comp_dev - archived_->v) / dt;
    const double new_max = std::min(slope_max_, hi);
    const double new_min = std::max(slope_min_, lo);
    const double exact = (p.v - archived_->v) / dt;
    // The exact slope must stay inside the tightened corridor; that keeps the
    // eventual archive segment within comp_dev of every discarded point.
    const bool violates = exact < new_min || exact > new_max;
    const bool overdue = dt > s.comp_max_s;
    if (!violates && !overdue) {
        slope_min_ = new_min;
        slope_max_ = new_max;
        held_ = p;
        return out;
    }
    out.push_back(*held_);
    archived_ = *held_;
    held_.reset();
    if (!restart_from(*archived_)) {
        out.push_back(p);
        archived_ = p;
    }
    return out;
}

std::optional<Point> SwingingDoor::flush() {
    if (!held_) return std::nullopt;
    archived_ = *held_;
    auto h = held_;
    held_.reset();
    return h;
}

// ---- archive ---------------------------------------------------------------------

StreamArchive::StreamArchive(fs::path file) : path_(std::move(file)) {
    fs::create_directories(path_.parent_path());
    if (fs::exists(path_)) {
        const auto size = fs::file_size(path_);
        const auto whole = size - size % 16;
        if (whole != size) {
            // torn tail from an interrupted append
            fs::resize_file(path_, whole);
            log::info("archive: dropped torn tail of " + path_.string());
        }
        std::ifstream in(path_, std::ios::binary);
        points_.resize(whole / 16);
        if (whole > 0)
            in.read(reinterpret_cast<char*>(points_.data()), static_cast<std::streamsize>(whole));
        if (!in.good() && whole > 0) throw std::runtime_error("archive: cannot read " + path_.string());
    }
    file_ = std::fopen(path_.c_str(), "ab");
    if (!file_) throw std::runtime_error("archive: cannot open " + path_.string());
}

StreamArchive::~StreamArchive() {
    if (file_) {
        std::fflush(file_);
        std::fclose(file_);
    }
}

void StreamArchive::append(const Point& p) {
    if (!points_.empty() && p.t <= points_.back().t)
        throw std::invalid_argument("archive: non-increasing timestamp for " + path_.string());
    static_assert(sizeof(Point) == 16);
    if (std::fwrite(&p, sizeof(Point), 1, file_) != 1)
        throw std::runtime_error("archive: write failed for " + path_.string());
    points_.push_back(p);
}

void StreamArchive::flush() {
    if (!file_) return;
    std::fflush(file_);
    ::fsync(::fileno(file_));
}

// ---- historian ----------------------------------------------------------------------

std::string stream_unit(const std::string& stream) {
    if (stream == "temp") return "degC";
    if (stream == "rh") return "pct_rh";
    if (stream == "lux") return "lux";
    if (stream == "ax" || stream == "ay" || stream == "az") return "g";
    if (stream == "occ_pct") return "pct";
    if (stream == "occ") return "bool";
    if (stream == "ori") return "axis";
    return "";
}

Historian::Historian(fs::path archive_dir, Settings settings)
    : dir_(std::move(archive_dir)), settings_(std::move(settings)) {
    fs::create_directories(dir_);
    load_existing();
}

void Historian::load_existing() {
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(dir_, ec)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (!name.ends_with(".bin")) continue;
        const auto sep = name.find('_');
        if (sep == std::string::npos) continue;
        std::uint16_t dev;
        if (!parse_u16(name.substr(0, sep), dev)) continue;
        const std::string stream_name = name.substr(sep + 1, name.size() - sep - 5);
        StreamKey key{dev, stream_name};
        Stream s;
        s.archive = std::make_unique<StreamArchive>(entry.path());
        if (!s.archive->points().empty()) {
            const Point last = s.archive->points().back();
            s.exception.prime(last);
            s.door.prime(last);
        }
        streams_.emplace(std::move(key), std::move(s));
    }
}

Historian::Stream& Historian::stream_for(const StreamKey& key) {
    auto it = streams_.find(key);
    if (it != streams_.end()) return it->second;
    Stream s;
    s.archive = std::make_unique<StreamArchive>(
        dir_ / (std::to_string(key.device_id) + "_" + key.stream + ".bin"));
    return streams_.emplace(key, std::move(s)).first->second;
}

const Historian::Stream* Historian::find_stream(const StreamKey& key) const {
    const auto it = streams_.find(key);
    return it == streams_.end() ? nullptr : &it->second;
}

void Historian::offer_point(Stream& s, const StreamSettings& cfg, const Point& p,
                            IngestStats& stats) {
    ++stats.points_offered;
    switch (s.exception.offer(p, cfg)) {
    case ExceptionFilter::Verdict::DropDeadband:
        ++stats.deadband_dropped;
        return;
    case ExceptionFilter::Verdict::DropStale:
        ++stats.stale_dropped;
        return;
    case ExceptionFilter::Verdict::DropDuplicate:
        ++stats.duplicates_dropped;
        return;
    case ExceptionFilter::Verdict::DropConflict:
        ++stats.conflicts;
        return;
    case ExceptionFilter::Verdict::Pass:
        break;
    }
    const auto before = s.door.rejected();
    for (const Point& a : s.door.offer(p, cfg)) {
        s.archive->append(a);
        ++stats.points_archived;
    }
    stats.sdt_rejected += s.door.rejected() - before;
}

IngestStats Historian::ingest_text(std::string_view text) {
    std::lock_guard lock(mutex_);
    IngestStats stats;
    stats.files = 1;
    const auto parsed = parse_flat_file(text);
    stats.parse_errors = parsed.errors.size();
    for (const auto& err : parsed.errors)
        log::debug("ingest: line " + std::to_string(err.line_no) + ": " + err.reason);
    stats.lines = parsed.records.size();

    std::vector<StreamArchive*> touched;
    auto offer = [&](const StreamKey& key, const Point& p) {
        Stream& s = stream_for(key);
        offer_point(s, settings_.for_stream(key.stream), p, stats);
        if (std::find(touched.begin(), touched.end(), s.archive.get()) == touched.end())
            touched.push_back(s.archive.get());
    };

    for (const auto& record : parsed.records) {
        if (const auto* r = std::get_if<SampleRecord>(&record)) {
            offer({r->device_id, "temp"}, {r->timestamp, r->temperature_c});
            offer({r->device_id, "rh"}, {r->timestamp, r->humidity_pct});
            offer({r->device_id, "lux"}, {r->timestamp, r->lux});
            offer({r->device_id, "ax"}, {r->timestamp, r->accel_g[0]});
            offer({r->device_id, "ay"}, {r->timestamp, r->accel_g[1]});
            offer({r->device_id, "az"}, {r->timestamp, r->accel_g[2]});
            offer({r->device_id, "occ_pct"}, {r->timestamp, r->occupancy_pct});
        } else if (const auto* r = std::get_if<OccRecord>(&record)) {
            offer({r->device_id, "occ"}, {r->timestamp, static_cast<double>(r->state)});
        } else if (const auto* r = std::get_if<OriRecord>(&record)) {
            offer({r->device_id, "ori"},
                  {r->timestamp, static_cast<double>(r->sign * (r->axis + 1))});
        }
    }

    // durability boundary: flush once per file, not per point
    for (auto* archive : touched) archive->flush();
    write_manifest();

    totals_.files += stats.files;
    totals_.lines += stats.lines;
    totals_.parse_errors += stats.parse_errors;
    totals_.points_offered += stats.points_offered;
    totals_.deadband_dropped += stats.deadband_dropped;
    totals_.duplicates_dropped += stats.duplicates_dropped;
    totals_.conflicts += stats.conflicts;
    totals_.stale_dropped += stats.stale_dropped;
    totals_.sdt_rejected += stats.sdt_rejected;
    totals_.points_archived += stats.points_archived;
    return stats;
}

void Historian::flush_all() {
    std::lock_guard lock(mutex_);
    for (auto& [key, s] : streams_) {
        if (auto held = s.door.flush()) {
            s.archive->append(*held);
            ++totals_.points_archived;
        }
        s.archive->flush();
    }
    write_manifest();
}

void Historian::write_manifest() const {
    std::ofstream out(dir_ / "manifest.txt", std::ios::trunc);
    for (const auto& [key, s] : streams_)
        out << key.device_id << ',' << key.stream << ',' << stream_unit(key.stream) << '\n';
}

std::vector<Point> Historian::query_raw(const StreamKey& key, double t0, double t1) const {
    std::lock_guard lock(mutex_);
    const Stream* s = find_stream(key);
    if (!s) {
        std::string known;
        for (const auto& [k, _] : streams_) known += (known.empty() ? "" : ", ") + k.display();
        throw UnknownStream("unknown stream " + key.display() +
                            (known.empty() ? "" : "; known streams: " + known));
    }
    const auto& pts = s->archive->points();
    auto lo = std::lower_bound(pts.begin(), pts.end(), t0,
                               [](const Point& p, double t) { return p.t < t; });
    auto hi = std::upper_bound(pts.begin(), pts.end(), t1,
                               [](double t, const Point& p) { return t < p.t; });
    return {lo, hi};
}

std::vector<std::pair<double, std::optional<double>>> Historian::query_interpolated(
    const StreamKey& key, double t0, double t1, double interval_s) const {
    if (interval_s <= 0) throw std::invalid_argument("interval must be positive");
    if (t1 < t0) throw std::invalid_argument("query window is inverted");
    std::lock_guard lock(mutex_);
    const Stream* s = find_stream(key);
    if (!s) {
        std::string known;
        for (const auto& [k, _] : streams_) known += (known.empty() ? "" : ", ") + k.display();
        throw UnknownStream("unknown stream " + key.display() +
                            (known.empty() ? "" : "; known streams: " + known));
    }
    const auto& pts = s->archive->points();
    std::vector<std::pair<double, std::optional<double>>> out;
    for (std::uint64_t k = 0;; ++k) {
        const double t = t0 + static_cast<double>(k) * interval_s;
        if (t > t1 + 1e-9) break;
        std::optional<double> value;
        if (!pts.empty() && t >= pts.front().t && t <= pts.back().t) {
            auto it = std::lower_bound(pts.begin(), pts.end(), t,
                                       [](const Point& p, double tt) { return p.t < tt; });
            if (it != pts.end() && it->t == t) {
                value = it->v;
            } else {
                const auto& b = *it;
                const auto& a = *std::prev(it);
                value = a.v + (b.v - a.v) * (t - a.t) / (b.t - a.t);
            }
        }
        out.emplace_back(t, value);
    }
    return out;
}

std::vector<StreamKey> Historian::streams() const {
    std::lock_guard lock(mutex_);
    std::vector<StreamKey> out;
    out.reserve(streams_.size());
    for (const auto& [key, _] : streams_) out.push_back(key);
    return out;
}

std::uint64_t Historian::archived_count(const StreamKey& key) const {
    std::lock_guard lock(mutex_);
    const Stream* s = find_stream(key);
    return s ? s->archive->points().size() : 0;
}

// ---- receiver ------------------------------------------------------------------------

FileReceiver::FileReceiver(std::string host, std::uint16_t port, fs::path inbox,
                           Historian& historian)
    : host_(std::move(host)), port_(port), inbox_(std::move(inbox)), historian_(historian) {}

FileReceiver::~FileReceiver() { stop(); }

void FileReceiver::start() {
    fs::create_directories(inbox_);
    auto listener = net::TcpListener::bind(host_, port_);
    if (!listener) throw std::runtime_error("ingest: cannot bind " + host_);
    listener_ = std::move(*listener);
    port_ = listener_.port();
    running_ = true;
    thread_ = std::thread([this] { serve_loop(); });
}

void FileReceiver::stop() {
    if (!running_.exchange(false)) return;
    listener_.close();
    if (thread_.joinable()) thread_.join();
}

FileReceiver::Stats FileReceiver::stats() const {
    std::lock_guard lock(stats_mutex_);
    return stats_;
}

void FileReceiver::serve_loop() {
    while (running_) {
        auto stream = listener_.accept();
        if (!stream) break;
        stream->set_read_timeout(10000);
        const bool ok = handle(*stream); // one transfer per connection
        const std::uint8_t reply = ok ? wire::kAck : 0x15;
        stream->write_all(std::span<const std::uint8_t>(&reply, 1));
    }
}

bool FileReceiver::handle(net::TcpStream& stream) {
    auto fail = [this](std::uint64_t Stats::*counter) {
        std::lock_guard lock(stats_mutex_);
        ++(stats_.*counter);
        return false;
    };

    std::uint8_t u16buf[2];
    if (!stream.read_exact(u16buf)) return fail(&Stats::rejected);
    const std::uint16_t name_len = static_cast<std::uint16_t>(u16buf[0] | (u16buf[1] << 8));
    if (name_len == 0 || name_len > 512) return fail(&Stats::rejected);
    std::string name(name_len, '\0');
    if (!stream.read_exact({reinterpret_cast<std::uint8_t*>(name.data()), name.size()}))
        return fail(&Stats::rejected);
    if (name.find('/') != std::string::npos || name.find('\\') != std::string::npos ||
        name.find("..") != std::string::npos)
        return fail(&Stats::rejected);

    std::uint8_t u32buf[4];
    if (!stream.read_exact(u32buf)) return fail(&Stats::rejected);
    const std::uint32_t body_len = static_cast<std::uint32_t>(u32buf[0]) |
                                   (static_cast<std::uint32_t>(u32buf[1]) << 8) |
                                   (static_cast<std::uint32_t>(u32buf[2]) << 16) |
                                   (static_cast<std::uint32_t>(u32buf[3]) << 24);
    if (body_len > 64u * 1024 * 1024) return fail(&Stats::rejected);
    std::vector<std::uint8_t> body(body_len);
    if (body_len > 0 && !stream.read_exact(body)) return fail(&Stats::rejected);
    if (!stream.read_exact(u32buf)) return fail(&Stats::rejected);
    const std::uint32_t sent_crc = static_cast<std::uint32_t>(u32buf[0]) |
                                   (static_cast<std::uint32_t>(u32buf[1]) << 8) |
                                   (static_cast<std::uint32_t>(u32buf[2]) << 16) |
                                   (static_cast<std::uint32_t>(u32buf[3]) << 24);
    if (wire::crc32(body) != sent_crc) return fail(&Stats::crc_failures);

    const fs::path dest = inbox_ / name;
    const fs::path tmp = dest.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(body.data()),
                  static_cast<std::streamsize>(body.size()));
        out.flush();
        if (!out.good()) return fail(&Stats::rejected);
    }
    std::error_code ec;
    fs::rename(tmp, dest, ec); // duplicates overwrite
    if (ec) return fail(&Stats::rejected);

    historian_.ingest_text(
        std::string_view(reinterpret_cast<const char*>(body.data()), body.size()));
    std::lock_guard lock(stats_mutex_);
    ++stats_.files_received;
    return true;
}

} // namespace telemote::ingest
