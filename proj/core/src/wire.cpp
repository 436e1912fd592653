#include "telemote/wire.hpp"

namespace telemote::wire {

namespace {

void put_u16(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

void put_i16(Bytes& out, std::int16_t v) { put_u16(out, static_cast<std::uint16_t>(v)); }

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = static_cast<std::uint32_t>(data_[pos_]) |
                          (static_cast<std::uint32_t>(data_[pos_ + 1]) << 8) |
                          (static_cast<std::uint32_t>(data_[pos_ + 2]) << 16) |
                          (static_cast<std::uint32_t>(data_[pos_ + 3]) << 24);
        pos_ += 4;
        return v;
    }
    std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) {
        if (remaining() < n) throw WireError("truncated message", pos_);
    }
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

void check_sample_ranges(const Sample& s) {
    if (s.temperature_cc < kTempMinCc || s.temperature_cc > kTempMaxCc)
        throw WireError("temperature out of range");
    if (s.humidity_crh > kHumidityMaxCrh) throw WireError("humidity out of range");
    for (auto a : s.accel_mg)
        if (a < -kAccelAbsMaxMg || a > kAccelAbsMaxMg)
            throw WireError("acceleration out of range");
}

} // namespace

Bytes encode_message(const SensorMessage& msg) {
    Bytes out;
    out.reserve(20);
    out.push_back(static_cast<std::uint8_t>(msg.kind()));
    put_u16(out, msg.device_id);
    put_u32(out, msg.timestamp);
    if (const auto* s = std::get_if<Sample>(&msg.payload)) {
        check_sample_ranges(*s);
        put_i16(out, s->temperature_cc);
        put_u16(out, s->humidity_crh);
        put_u16(out, s->illuminance_lux);
        for (auto a : s->accel_mg) put_i16(out, a);
        out.push_back(s->occupancy_fraction);
    } else if (const auto* o = std::get_if<OccEvent>(&msg.payload)) {
        if (o->state > 1) throw WireError("occupancy state out of range");
        out.push_back(o->state);
    } else {
        const auto& ori = std::get<OriEvent>(msg.payload);
        if (ori.axis > 2) throw WireError("orientation axis out of range");
        if (ori.sign != 1 && ori.sign != -1) throw WireError("orientation sign out of range");
        out.push_back(ori.axis);
        out.push_back(ori.sign > 0 ? 0x00 : 0x01);
    }
    return out;
}

SensorMessage decode_message(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    const std::uint8_t kind = r.u8();
    SensorMessage msg;
    msg.device_id = r.u16();
    msg.timestamp = r.u32();
    switch (kind) {
    case static_cast<std::uint8_t>(Kind::Sample): {
        Sample s;
        s.temperature_cc = r.i16();
        s.humidity_crh = r.u16();
        s.illuminance_lux = r.u16();
        for (auto& a : s.accel_mg) a = r.i16();
        s.occupancy_fraction = r.u8();
        msg.payload = s;
        break;
    }
    case static_cast<std::uint8_t>(Kind::OccEvent): {
        OccEvent o{r.u8()};
        if (o.state > 1) throw WireError("occupancy state out of range", r.pos() - 1);
        msg.payload = o;
        break;
    }
    case static_cast<std::uint8_t>(Kind::OriEvent): {
        OriEvent o;
        o.axis = r.u8();
        if (o.axis > 2) throw WireError("orientation axis out of range", r.pos() - 1);
        const std::uint8_t sign = r.u8();
        if (sign > 1) throw WireError("orientation sign out of range", r.pos() - 1);
        o.sign = sign == 0 ? 1 : -1;
        msg.payload = o;
        break;
    }
    default:
        throw WireError("unknown kind", 0);
    }
    if (r.remaining() != 0) throw WireError("trailing bytes after message", r.pos());
    return msg;
}

std::uint16_t crc16(std::span<const std::uint8_t> data) {
    std::uint16_t crc = 0xFFFF;
    for (std::uint8_t b : data) {
        crc ^= static_cast<std::uint16_t>(b) << 8;
        for (int i = 0; i < 8; ++i)
            crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                                 : static_cast<std::uint16_t>(crc << 1);
    }
    return crc;
}

std::uint32_t crc32(std::span<const std::uint8_t> data) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::uint8_t b : data) crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

namespace {

void push_escaped(Bytes& out, std::uint8_t b) {
    if (b == kDelimiter) {
        out.push_back(kEscape);
        out.push_back(kEscapedDelimiter);
    } else if (b == kEscape) {
        out.push_back(kEscape);
        out.push_back(kEscapedEscape);
    } else {
        out.push_back(b);
    }
}

// Unescapes a delimiterless segment. Nullopt on an invalid escape sequence.
std::optional<Bytes> unescape(std::span<const std::uint8_t> seg) {
    Bytes out;
    out.reserve(seg.size());
    for (std::size_t i = 0; i < seg.size(); ++i) {
        if (seg[i] != kEscape) {
            out.push_back(seg[i]);
            continue;
        }
        if (++i == seg.size()) return std::nullopt;
        if (seg[i] == kEscapedDelimiter)
            out.push_back(kDelimiter);
        else if (seg[i] == kEscapedEscape)
            out.push_back(kEscape);
        else
            return std::nullopt;
    }
    return out;
}

// Longest possible escaped body: (payload + crc) with every byte escaped.
constexpr std::size_t kMaxEscapedSegment = (kMaxFramePayload + 2) * 2;

} // namespace

Bytes frame_encode(std::span<const std::uint8_t> payload) {
    if (payload.empty()) throw WireError("empty frame payload");
    if (payload.size() > kMaxFramePayload) throw WireError("frame payload too long");
    const std::uint16_t crc = crc16(payload);
    Bytes out;
    out.reserve(payload.size() + 4);
    for (std::uint8_t b : payload) push_escaped(out, b);
    push_escaped(out, static_cast<std::uint8_t>(crc >> 8));
    push_escaped(out, static_cast<std::uint8_t>(crc & 0xFF));
    out.push_back(kDelimiter);
    return out;
}

std::optional<Bytes> frame_decode(std::span<const std::uint8_t> frame) {
    FrameStreamDecoder dec;
    auto frames = dec.feed(frame);
    if (frames.size() != 1 || dec.frames_dropped() != 0) return std::nullopt;
    return frames.front();
}

void FrameStreamDecoder::finish_segment(std::vector<Bytes>& out) {
    const bool overlong = overlong_;
    overlong_ = false;
    Bytes seg = std::move(segment_);
    segment_.clear();
    if (seg.empty() && !overlong) return; // bare delimiter, carries nothing
    if (overlong) {
        ++dropped_;
        return;
    }
    auto body = unescape(seg);
    if (!body || body->size() < 3 || body->size() > kMaxFramePayload + 2) {
        ++dropped_;
        return;
    }
    const std::size_t n = body->size();
    const std::uint16_t sent =
        static_cast<std::uint16_t>(((*body)[n - 2] << 8) | (*body)[n - 1]);
    body->resize(n - 2);
    if (crc16(*body) != sent) {
        ++dropped_;
        return;
    }
    ++delivered_;
    out.push_back(std::move(*body));
}

std::vector<Bytes> FrameStreamDecoder::feed(std::span<const std::uint8_t> data) {
    std::vector<Bytes> out;
    for (std::uint8_t b : data) {
        if (b == kDelimiter) {
            finish_segment(out);
            continue;
        }
        if (overlong_) continue;
        segment_.push_back(b);
        if (segment_.size() > kMaxEscapedSegment) {
            segment_.clear();
            overlong_ = true;
        }
    }
    return out;
}

StreamDecodeResult frame_decode_stream(std::span<const std::uint8_t> data) {
    FrameStreamDecoder dec;
    StreamDecodeResult res;
    res.frames = dec.feed(data);
    res.dropped = dec.frames_dropped();
    return res;
}

Bytes make_hello(std::uint16_t device_id, std::uint8_t version, std::uint16_t record_count) {
    Bytes out{kHelloMarker};
    put_u16(out, device_id);
    out.push_back(version);
    put_u16(out, record_count);
    return out;
}

Bytes make_end(std::uint16_t messages_sent) {
    Bytes out{kEndMarker};
    put_u16(out, messages_sent);
    return out;
}

std::optional<Hello> parse_hello(std::span<const std::uint8_t> p) {
    if (p.size() != 6 || p[0] != kHelloMarker) return std::nullopt;
    Hello h;
    h.device_id = static_cast<std::uint16_t>(p[1] | (p[2] << 8));
    h.version = p[3];
    h.record_count = static_cast<std::uint16_t>(p[4] | (p[5] << 8));
    return h;
}

std::optional<std::uint16_t> parse_end(std::span<const std::uint8_t> p) {
    if (p.size() != 3 || p[0] != kEndMarker) return std::nullopt;
    return static_cast<std::uint16_t>(p[1] | (p[2] << 8));
}

} // namespace telemote::wire
