#include "telemote/gateway.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

#include "telemote/log.hpp"
#include "telemote/recordstore.hpp"

namespace telemote::gateway {

namespace fs = std::filesystem;

void SpoolConfig::validate() const {
    if (retention_days < 1) throw std::invalid_argument("retention_days must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (spool_root.empty()) throw std::invalid_argument("spool_root is required");
}

std::string message_to_line(const wire::SensorMessage& msg, std::int64_t epoch_unix) {
    const long long ts = epoch_unix + static_cast<long long>(msg.timestamp);
    char buf[160];
    if (const auto* s = std::get_if<wire::Sample>(&msg.payload)) {
        std::snprintf(buf, sizeof buf, "S,%u,%lld,%.2f,%.2f,%u,%.3f,%.3f,%.3f,%.1f",
                      msg.device_id, ts, s->temperature_cc / 100.0, s->humidity_crh / 100.0,
                      s->illuminance_lux, s->accel_mg[0] / 1000.0, s->accel_mg[1] / 1000.0,
                      s->accel_mg[2] / 1000.0, s->occupancy_fraction * 100.0 / 255.0);
    } else if (const auto* o = std::get_if<wire::OccEvent>(&msg.payload)) {
        std::snprintf(buf, sizeof buf, "E,%u,%lld,OCC,%u", msg.device_id, ts, o->state);
    } else {
        const auto& ori = std::get<wire::OriEvent>(msg.payload);
        std::snprintf(buf, sizeof buf, "E,%u,%lld,ORI,%c,%c", msg.device_id, ts,
                      "xyz"[ori.axis], ori.sign > 0 ? '+' : '-');
    }
    return buf;
}

SpoolListener::SpoolListener(SpoolConfig config, Clock& clock)
    : config_(std::move(config)), clock_(clock) {
    config_.validate();
}

SpoolListener::~SpoolListener() { stop(); }

void SpoolListener::start() {
    fs::create_directories(config_.spool_root);
    auto listener = net::TcpListener::bind(config_.listen_host, config_.listen_port);
    if (!listener) throw std::runtime_error("gateway: cannot bind " + config_.listen_host);
    listener_ = std::move(*listener);
    port_ = listener_.port();
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void SpoolListener::stop() {
    if (!running_.exchange(false)) return;
    listener_.close();
    if (accept_thread_.joinable()) accept_thread_.join();
    std::lock_guard lock(threads_mutex_);
    for (auto& t : connection_threads_)
        if (t.joinable()) t.join();
    connection_threads_.clear();
}

SpoolListener::Stats SpoolListener::stats() const {
    std::lock_guard lock(stats_mutex_);
    return stats_;
}

void SpoolListener::accept_loop() {
    while (running_) {
        auto stream = listener_.accept();
        if (!stream) break;
        std::lock_guard lock(threads_mutex_);
        connection_threads_.emplace_back(
            [this, s = std::move(*stream)]() mutable { handle_connection(std::move(s)); });
    }
}

std::filesystem::path SpoolListener::next_file_path(std::uint16_t device_id) {
    std::lock_guard lock(naming_mutex_);
    const std::int64_t now = clock_.now_unix();
    const fs::path day_dir = config_.spool_root / date_util::utc_yyyymmdd(now);
    fs::create_directories(day_dir);
    const std::string hhmmss = date_util::utc_hhmmss(now);
    int seq = seq_[{now, device_id}];
    fs::path path;
    for (;;) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_%u_%d.txt", hhmmss.c_str(), device_id, seq);
        path = day_dir / name;
        if (!fs::exists(path) && !fs::exists(fs::path(path.string() + ".sent"))) break;
        ++seq;
    }
    seq_[{now, device_id}] = seq + 1;
    return path;
}

void SpoolListener::handle_connection(net::TcpStream stream) {
    stream.set_read_timeout(10000);
    wire::FrameStreamDecoder decoder;
    recordstore::RecordReader reader;

    bool got_hello = false;
    bool got_end = false;
    bool rejected = false;
    wire::Hello hello{};
    std::vector<std::string> lines;
    std::uint64_t undecodable = 0;

    std::uint8_t buf[4096];
    while (!got_end && !rejected) {
        const std::ptrdiff_t n = stream.read_some(std::span<std::uint8_t>(buf, sizeof buf));
        if (n <= 0) break; // EOF or error: keep whatever prefix decoded
        for (auto& frame : decoder.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)))) {
            if (!got_hello) {
                auto h = wire::parse_hello(frame);
                if (!h || h->version != wire::kProtocolVersion) {
                    rejected = true;
                    break;
                }
                hello = *h;
                got_hello = true;
                continue;
            }
            if (auto sent = wire::parse_end(frame)) {
                got_end = true;
                if (*sent != lines.size())
                    log::debug("gateway: END count " + std::to_string(*sent) + " != decoded " +
                               std::to_string(lines.size()));
                break;
            }
            // A record frame. HELLO/END markers cannot collide: template
            // records pin their total length via the header byte (a 6-byte
            // 0x48 or 3-byte 0x45 record is structurally impossible) and
            // delta headers have the high bit set.
            std::string reason;
            auto msg_bytes = reader.feed(frame, &reason);
            if (!msg_bytes) {
                log::debug("gateway: record dropped: " + reason);
                continue;
            }
            try {
                const auto msg = wire::decode_message(*msg_bytes);
                lines.push_back(message_to_line(msg, config_.epoch_unix));
            } catch (const wire::WireError& e) {
                log::debug(std::string("gateway: undecodable message: ") + e.what());
                ++undecodable;
            }
        }
    }

    bool file_ok = true;
    if (!rejected && got_hello && !lines.empty()) {
        const fs::path path = next_file_path(hello.device_id);
        const fs::path tmp = path.string() + ".tmp";
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        for (const auto& line : lines) out << line << '\n';
        out.flush();
        file_ok = out.good();
        out.close();
        std::error_code ec;
        if (file_ok) fs::rename(tmp, path, ec);
        if (ec) file_ok = false;
        if (!file_ok) fs::remove(tmp, ec);
    }

    if (got_end && !rejected && file_ok) {
        const std::uint8_t ack = wire::kAck;
        stream.write_all(std::span<const std::uint8_t>(&ack, 1));
    }
    stream.close();

    std::lock_guard lock(stats_mutex_);
    ++stats_.connections;
    if (rejected || !got_hello) ++stats_.rejected;
    if (got_hello && !got_end && !rejected) ++stats_.partial_connections;
    if (!rejected && got_hello && !lines.empty() && file_ok) {
        ++stats_.files_written;
        stats_.lines_written += lines.size();
    }
    stats_.frames_dropped += decoder.frames_dropped();
    stats_.records_dropped += reader.dropped() + reader.malformed() + undecodable;
}

bool TcpPushChannel::put(const std::string& name, std::span<const std::uint8_t> body) {
    auto stream = net::TcpStream::connect(host_, port_, timeout_ms_);
    if (!stream) return false;
    stream->set_read_timeout(timeout_ms_);

    std::vector<std::uint8_t> head;
    head.reserve(name.size() + 10);
    const auto name_len = static_cast<std::uint16_t>(name.size());
    head.push_back(static_cast<std::uint8_t>(name_len & 0xFF));
    head.push_back(static_cast<std::uint8_t>(name_len >> 8));
    head.insert(head.end(), name.begin(), name.end());
    const auto body_len = static_cast<std::uint32_t>(body.size());
    for (int i = 0; i < 4; ++i) head.push_back(static_cast<std::uint8_t>((body_len >> (8 * i)) & 0xFF));
    if (!stream->write_all(head)) return false;
    if (!stream->write_all(body)) return false;
    const std::uint32_t crc = wire::crc32(body);
    std::uint8_t tail[4];
    for (int i = 0; i < 4; ++i) tail[i] = static_cast<std::uint8_t>((crc >> (8 * i)) & 0xFF);
    if (!stream->write_all(tail)) return false;

    std::uint8_t reply = 0;
    if (!stream->read_exact(std::span<std::uint8_t>(&reply, 1))) return false;
    return reply == wire::kAck;
}

std::vector<std::filesystem::path> unsent_files(const SpoolConfig& config) {
    std::vector<std::pair<std::string, fs::path>> found;
    std::error_code ec;
    for (const auto& day : fs::directory_iterator(config.spool_root, ec)) {
        if (!day.is_directory()) continue;
        if (!date_util::parse_yyyymmdd_days(day.path().filename().string())) continue;
        for (const auto& entry : fs::directory_iterator(day.path(), ec)) {
            if (!entry.is_regular_file()) continue;
            const std::string name = entry.path().filename().string();
            if (!name.ends_with(".txt")) continue; // skips .sent and .tmp
            found.emplace_back(day.path().filename().string() + "/" + name, entry.path());
        }
    }
    std::sort(found.begin(), found.end());
    std::vector<fs::path> out;
    out.reserve(found.size());
    for (auto& [_, p] : found) out.push_back(std::move(p));
    return out;
}

DistributeResult distribute(const SpoolConfig& config, TransferChannel& channel) {
    DistributeResult result;
    const auto pending = unsent_files(config);
    const auto batch = std::min<std::size_t>(pending.size(), static_cast<std::size_t>(config.batch_size));
    for (std::size_t i = 0; i < batch; ++i) {
        const fs::path& path = pending[i];
        std::ifstream in(path, std::ios::binary);
        std::vector<std::uint8_t> body((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
        if (!in.good() && !in.eof()) {
            ++result.files_failed;
            break;
        }
        // Flatten the day directory into the transfer name so files from
        // different days cannot collide at the destination.
        const std::string xfer_name =
            path.parent_path().filename().string() + "_" + path.filename().string();
        if (!channel.put(xfer_name, body)) {
            ++result.files_failed;
            break; // defer the rest of the round
        }
        std::error_code ec;
        fs::rename(path, fs::path(path.string() + ".sent"), ec);
        if (ec)
            log::info("gateway: rename after successful put failed for " + path.string() +
                      " (duplicate possible next round)");
        ++result.files_sent;
    }
    result.backlog_after = static_cast<int>(unsent_files(config).size());
    return result;
}

PurgeResult purge(const SpoolConfig& config, std::int64_t now_unix) {
    PurgeResult result;
    const std::int64_t cutoff = date_util::unix_to_days(now_unix) - config.retention_days;
    std::error_code ec;
    std::vector<fs::path> to_remove;
    for (const auto& day : fs::directory_iterator(config.spool_root, ec)) {
        if (!day.is_directory()) continue;
        const auto days = date_util::parse_yyyymmdd_days(day.path().filename().string());
        if (!days || *days > cutoff) continue;
        to_remove.push_back(day.path());
    }
    for (const auto& dir : to_remove) {
        int unsent = 0;
        for (const auto& entry : fs::directory_iterator(dir, ec)) {
            if (entry.is_regular_file() && entry.path().filename().string().ends_with(".txt"))
                ++unsent;
        }
        std::error_code rm_ec;
        fs::remove_all(dir, rm_ec);
        if (rm_ec) {
            log::info("gateway: purge failed for " + dir.string() + ": " + rm_ec.message());
            continue;
        }
        if (unsent > 0)
            log::info("gateway: purged " + std::to_string(unsent) + " unsent file(s) from " +
                      dir.string());
        result.unsent_files_dropped += unsent;
        ++result.directories_removed;
    }
    return result;
}

Distributor::Distributor(SpoolConfig config, TransferChannel& channel, Clock& clock)
    : config_(std::move(config)), channel_(channel), clock_(clock) {}

Distributor::~Distributor() { stop(); }

DistributeResult Distributor::run_round() {
    const auto round = distribute(config_, channel_);
    const auto purged = purge(config_, clock_.now_unix());
    std::lock_guard lock(mutex_);
    ++stats_.rounds;
    stats_.files_sent += static_cast<std::uint64_t>(round.files_sent);
    stats_.files_failed += static_cast<std::uint64_t>(round.files_failed);
    stats_.directories_purged += static_cast<std::uint64_t>(purged.directories_removed);
    stats_.unsent_purged += static_cast<std::uint64_t>(purged.unsent_files_dropped);
    if (round.backlog_after > last_backlog_) ++stats_.saturation_events;
    last_backlog_ = round.backlog_after;
    return round;
}

void Distributor::start() {
    if (running_.exchange(true)) return;
    worker_ = std::thread([this] {
        while (running_) {
            run_round();
            const auto ms = static_cast<int>(config_.poll_interval_s * 1000);
            for (int waited = 0; running_ && waited < ms; waited += 50)
                std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
    });
}

void Distributor::stop() {
    if (!running_.exchange(false)) return;
    if (worker_.joinable()) worker_.join();
}

Distributor::Stats Distributor::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

} // namespace telemote::gateway
