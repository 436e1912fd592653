#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace telemote::recordstore {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kMaxMessageBytes = 128;
inline constexpr std::size_t kMaxTemplates = 128;

/// Equal-byte runs of this length or shorter are absorbed into one span:
/// merging duplicates at most 2 bytes but saves a 2-byte span header.
inline constexpr std::size_t kGapMergeThreshold = 2;

/// Worst-case record is one header byte plus the full message.
inline constexpr std::size_t kWorstCaseRecordBytes = kMaxMessageBytes + 1;

class MessageTooLarge : public std::length_error {
public:
    MessageTooLarge() : std::length_error("message exceeds 128-byte cap") {}
};

class CapacityError : public std::runtime_error {
public:
    explicit CapacityError(std::string what) : std::runtime_error(std::move(what)) {}
};

struct Stats {
    std::uint64_t raw_bytes = 0;    // total message bytes appended
    std::uint64_t stored_bytes = 0; // arena bytes consumed
    std::uint32_t record_count = 0;

    double ratio() const {
        return stored_bytes == 0 ? 1.0
                                 : static_cast<double>(raw_bytes) / static_cast<double>(stored_bytes);
    }
};

/// Append-only arena of template and delta records. A template record stores
/// a full message; a delta record patches byte spans of an earlier template.
/// Bytes already written are never modified, so the arena doubles as the wire
/// dump. Record layout:
///
///   TEMPLATE:  [len-1, 0x00..0x7F] [message bytes]
///   DELTA:     [0x80 | template-index] [span count] ([offset][len][bytes])*
class RecordStore {
public:
    explicit RecordStore(std::size_t capacity_bytes);

    /// Appends one message, choosing delta-vs-template encoding.
    /// Returns the bytes consumed. Throws MessageTooLarge or CapacityError
    /// (arena full, or a 129th template would be needed).
    std::size_t append(std::span<const std::uint8_t> msg);

    /// The arena bytes, verbatim.
    std::span<const std::uint8_t> dump() const { return arena_; }

    /// Per-record views into the arena, for record-granularity framing.
    std::vector<std::span<const std::uint8_t>> records() const;

    void clear();

    std::size_t capacity_bytes() const { return capacity_; }
    std::size_t free_bytes() const { return capacity_ - arena_.size(); }
    std::size_t record_count() const { return record_offsets_.size(); }
    std::size_t template_count() const { return templates_.size(); }
    const Stats& stats() const { return stats_; }

private:
    std::size_t capacity_;
    Bytes arena_;
    std::vector<std::size_t> record_offsets_;
    std::vector<std::size_t> templates_; // arena offsets of template records, in emission order
    Stats stats_;
};

/// Incremental decoder: feed whole records (e.g. one per frame), get messages
/// back. Maintains its own template list, mirroring the appender.
class RecordReader {
public:
    /// Decodes a single complete record. Returns the reconstructed message,
    /// or nullopt when the record is dropped (unknown template reference) or
    /// malformed; `reason`, when given, says why.
    std::optional<Bytes> feed(std::span<const std::uint8_t> record, std::string* reason = nullptr);

    std::uint64_t dropped() const { return dropped_; }
    std::uint64_t malformed() const { return malformed_; }

private:
    std::vector<Bytes> templates_;
    std::uint64_t dropped_ = 0;
    std::uint64_t malformed_ = 0;
};

struct DecodeResult {
    std::vector<Bytes> messages;
    std::uint64_t dropped_deltas = 0;        // deltas referencing unknown templates
    std::optional<std::size_t> error_offset; // set when decoding stopped early
    std::string error;
};

/// Decodes a dump byte stream. Tolerates truncation at a record boundary;
/// stops (reporting the offset) on a malformed or truncated record.
DecodeResult decode(std::span<const std::uint8_t> dump);

/// Uncompressed-capacity sizing: floor((ram - program) / avg_msg_bytes).
/// Throws std::invalid_argument when program_bytes >= ram_bytes or
/// avg_msg_bytes == 0.
std::uint32_t max_messages(std::uint32_t ram_bytes, std::uint32_t program_bytes,
                           std::uint32_t avg_msg_bytes);

} // namespace telemote::recordstore
