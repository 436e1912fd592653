#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace telemote::wire {

using Bytes = std::vector<std::uint8_t>;

/// Thrown on encode range violations and single-message decode failures.
class WireError : public std::runtime_error {
public:
    WireError(std::string what, std::size_t offset = 0)
        : std::runtime_error(std::move(what)), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

enum class Kind : std::uint8_t {
    Sample = 0x01,
    OccEvent = 0x02,
    OriEvent = 0x03,
};

// Field bounds, from the sensor operating ranges.
inline constexpr std::int16_t kTempMinCc = -4000;  // centi-degC
inline constexpr std::int16_t kTempMaxCc = 8500;
inline constexpr std::uint16_t kHumidityMaxCrh = 10000;  // centi-%RH
inline constexpr std::int16_t kAccelAbsMaxMg = 8000;     // milli-g
inline constexpr std::size_t kMaxMessageBytes = 128;

/// One periodic reading set: 7 data streams.
struct Sample {
    std::int16_t temperature_cc = 0;   // centi-degC
    std::uint16_t humidity_crh = 0;    // centi-%RH
    std::uint16_t illuminance_lux = 0; // lux
    std::array<std::int16_t, 3> accel_mg{}; // milli-g, x/y/z
    std::uint8_t occupancy_fraction = 0;    // 0..255 mapping to 0..100%

    bool operator==(const Sample&) const = default;
};

struct OccEvent {
    std::uint8_t state = 0; // 0|1

    bool operator==(const OccEvent&) const = default;
};

struct OriEvent {
    std::uint8_t axis = 0;  // 0=x, 1=y, 2=z
    std::int8_t sign = 1;   // +1 | -1

    bool operator==(const OriEvent&) const = default;
};

struct SensorMessage {
    std::uint16_t device_id = 0;
    std::uint32_t timestamp = 0; // seconds since simulation epoch
    std::variant<Sample, OccEvent, OriEvent> payload = Sample{};

    Kind kind() const {
        switch (payload.index()) {
        case 0: return Kind::Sample;
        case 1: return Kind::OccEvent;
        default: return Kind::OriEvent;
        }
    }

    bool operator==(const SensorMessage&) const = default;
};

/// Fixed little-endian layout: [kind u8][device_id u16][timestamp u32][payload].
/// Sample encodes to 20 bytes total, OccEvent to 8, OriEvent to 9.
/// Throws WireError on out-of-range fields.
Bytes encode_message(const SensorMessage& msg);

/// Exact inverse of encode_message. Throws WireError (with offset) on
/// unknown kind, truncation, or trailing bytes.
SensorMessage decode_message(std::span<const std::uint8_t> bytes);

// ---- framing -------------------------------------------------------------

inline constexpr std::uint8_t kDelimiter = 0x0A;
inline constexpr std::uint8_t kEscape = 0x1B;
inline constexpr std::uint8_t kEscapedDelimiter = 0x01;
inline constexpr std::uint8_t kEscapedEscape = 0x02;
inline constexpr std::size_t kMaxFramePayload = 131;

/// CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF).
std::uint16_t crc16(std::span<const std::uint8_t> data);

/// CRC-32 (IEEE 802.3, reflected). Used by the file-transfer channel.
std::uint32_t crc32(std::span<const std::uint8_t> data);

/// Appends the big-endian CRC, escapes 0x0A and 0x1B inside the body, and
/// terminates with the 0x0A delimiter. Throws WireError on empty payloads or
/// payloads longer than kMaxFramePayload.
Bytes frame_encode(std::span<const std::uint8_t> payload);

/// Decodes exactly one encoded frame (delimiter included). Nullopt if the
/// frame is malformed or fails its CRC.
std::optional<Bytes> frame_decode(std::span<const std::uint8_t> frame);

/// Splits an arbitrary byte stream on unescaped delimiters, recovering every
/// intact frame and counting the rest. Corruption never stalls the stream:
/// decoding resumes at the next delimiter.
class FrameStreamDecoder {
public:
    /// Returns payloads of the frames completed by this chunk, in order.
    std::vector<Bytes> feed(std::span<const std::uint8_t> data);

    std::uint64_t frames_delivered() const { return delivered_; }
    std::uint64_t frames_dropped() const { return dropped_; }

private:
    void finish_segment(std::vector<Bytes>& out);

    Bytes segment_;
    bool overlong_ = false;
    std::uint64_t delivered_ = 0;
    std::uint64_t dropped_ = 0;
};

struct StreamDecodeResult {
    std::vector<Bytes> frames;
    std::uint64_t dropped = 0;
};

/// One-shot convenience over FrameStreamDecoder.
StreamDecodeResult frame_decode_stream(std::span<const std::uint8_t> data);

// ---- report session frames ------------------------------------------------

inline constexpr std::uint8_t kHelloMarker = 0x48;
inline constexpr std::uint8_t kEndMarker = 0x45;
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::uint8_t kAck = 0x06;

/// [0x48][device_id u16 LE][version u8][record_count u16 LE]
Bytes make_hello(std::uint16_t device_id, std::uint8_t version, std::uint16_t record_count);

/// [0x45][messages_sent u16 LE]
Bytes make_end(std::uint16_t messages_sent);

struct Hello {
    std::uint16_t device_id;
    std::uint8_t version;
    std::uint16_t record_count;
};

std::optional<Hello> parse_hello(std::span<const std::uint8_t> payload);
std::optional<std::uint16_t> parse_end(std::span<const std::uint8_t> payload);

} // namespace telemote::wire
