#include "telemote/recordstore.hpp"

#include <algorithm>

namespace telemote::recordstore {

namespace {

struct Span {
    std::size_t offset;
    std::size_t length;
};

// Maximal differing spans between msg and tmpl (equal lengths), with runs of
// up to kGapMergeThreshold equal bytes folded into the surrounding span.
std::vector<Span> diff_spans(std::span<const std::uint8_t> msg, std::span<const std::uint8_t> tmpl) {
    std::vector<Span> spans;
    const std::size_t n = msg.size();
    std::size_t i = 0;
    while (i < n) {
        if (msg[i] == tmpl[i]) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        std::size_t last_diff = i;
        ++i;
        while (i < n) {
            if (msg[i] != tmpl[i]) {
                last_diff = i++;
                continue;
            }
            // Peek at the equal run; absorb it when short enough and another
            // difference follows.
            std::size_t run_end = i;
            while (run_end < n && msg[run_end] == tmpl[run_end]) ++run_end;
            if (run_end < n && run_end - i <= kGapMergeThreshold)
                i = run_end;
            else
                break;
        }
        spans.push_back({start, last_diff - start + 1});
    }
    return spans;
}

std::size_t delta_encoded_size(const std::vector<Span>& spans) {
    std::size_t size = 2; // header + span count
    for (const auto& s : spans) size += 2 + s.length;
    return size;
}

} // namespace

RecordStore::RecordStore(std::size_t capacity_bytes) : capacity_(capacity_bytes) {
    arena_.reserve(capacity_);
}

std::size_t RecordStore::append(std::span<const std::uint8_t> msg) {
    if (msg.empty() || msg.size() > kMaxMessageBytes) throw MessageTooLarge();

    // Most recent template of identical length, if any.
    std::optional<std::size_t> tmpl_index;
    for (std::size_t i = templates_.size(); i-- > 0;) {
        const std::size_t off = templates_[i];
        if (static_cast<std::size_t>(arena_[off]) + 1 == msg.size()) {
            tmpl_index = i;
            break;
        }
    }

    std::vector<Span> spans;
    bool emit_delta = false;
    if (tmpl_index) {
        auto tmpl = std::span<const std::uint8_t>(arena_).subspan(templates_[*tmpl_index] + 1,
                                                                  msg.size());
        spans = diff_spans(msg, tmpl);
        // Ties favour a fresh template, resetting drift.
        emit_delta = delta_encoded_size(spans) < msg.size() + 1;
    }

    if (emit_delta) {
        const std::size_t size = delta_encoded_size(spans);
        if (size > free_bytes()) throw CapacityError("arena full");
        record_offsets_.push_back(arena_.size());
        arena_.push_back(static_cast<std::uint8_t>(0x80 | *tmpl_index));
        arena_.push_back(static_cast<std::uint8_t>(spans.size()));
        for (const auto& s : spans) {
            arena_.push_back(static_cast<std::uint8_t>(s.offset));
            arena_.push_back(static_cast<std::uint8_t>(s.length));
            arena_.insert(arena_.end(), msg.begin() + static_cast<std::ptrdiff_t>(s.offset),
                          msg.begin() + static_cast<std::ptrdiff_t>(s.offset + s.length));
        }
        stats_.raw_bytes += msg.size();
        stats_.stored_bytes += size;
        ++stats_.record_count;
        return size;
    }

    if (templates_.size() >= kMaxTemplates) throw CapacityError("template list full");
    const std::size_t size = msg.size() + 1;
    if (size > free_bytes()) throw CapacityError("arena full");
    record_offsets_.push_back(arena_.size());
    templates_.push_back(arena_.size());
    arena_.push_back(static_cast<std::uint8_t>(msg.size() - 1));
    arena_.insert(arena_.end(), msg.begin(), msg.end());
    stats_.raw_bytes += msg.size();
    stats_.stored_bytes += size;
    ++stats_.record_count;
    return size;
}

std::vector<std::span<const std::uint8_t>> RecordStore::records() const {
    std::vector<std::span<const std::uint8_t>> out;
    out.reserve(record_offsets_.size());
    for (std::size_t i = 0; i < record_offsets_.size(); ++i) {
        const std::size_t begin = record_offsets_[i];
        const std::size_t end =
            i + 1 < record_offsets_.size() ? record_offsets_[i + 1] : arena_.size();
        out.push_back(std::span<const std::uint8_t>(arena_).subspan(begin, end - begin));
    }
    return out;
}

void RecordStore::clear() {
    arena_.clear();
    record_offsets_.clear();
    templates_.clear();
    stats_ = Stats{};
}

namespace {

// Shared single-record decode. `cursor` advances past the record on success
// or structural completeness; a structural error leaves it at the record start.
enum class RecordStatus { Message, UnknownTemplate, Malformed, Truncated };

struct RecordOutcome {
    RecordStatus status;
    Bytes message;
    std::string reason;
};

RecordOutcome decode_record(std::span<const std::uint8_t> data, std::size_t& cursor,
                            std::vector<Bytes>& templates) {
    const std::size_t start = cursor;
    const std::uint8_t header = data[cursor];
    if ((header & 0x80) == 0) {
        const std::size_t len = static_cast<std::size_t>(header) + 1;
        if (data.size() - cursor - 1 < len) {
            return {RecordStatus::Truncated, {}, "truncated template record"};
        }
        Bytes msg(data.begin() + static_cast<std::ptrdiff_t>(cursor + 1),
                  data.begin() + static_cast<std::ptrdiff_t>(cursor + 1 + len));
        cursor += 1 + len;
        templates.push_back(msg);
        return {RecordStatus::Message, std::move(msg), {}};
    }

    const std::size_t tmpl_index = header & 0x7F;
    if (data.size() - cursor < 2) return {RecordStatus::Truncated, {}, "truncated delta header"};
    const std::size_t span_count = data[cursor + 1];
    std::size_t pos = cursor + 2;

    const bool known = tmpl_index < templates.size();
    Bytes msg = known ? templates[tmpl_index] : Bytes{};
    for (std::size_t s = 0; s < span_count; ++s) {
        if (data.size() - pos < 2) return {RecordStatus::Truncated, {}, "truncated span header"};
        const std::size_t offset = data[pos];
        const std::size_t length = data[pos + 1];
        pos += 2;
        if (length == 0) {
            cursor = start;
            return {RecordStatus::Malformed, {}, "zero-length span"};
        }
        if (data.size() - pos < length) return {RecordStatus::Truncated, {}, "truncated span bytes"};
        if (known) {
            if (offset + length > msg.size()) {
                cursor = start;
                return {RecordStatus::Malformed, {}, "span beyond template length"};
            }
            std::copy(data.begin() + static_cast<std::ptrdiff_t>(pos),
                      data.begin() + static_cast<std::ptrdiff_t>(pos + length),
                      msg.begin() + static_cast<std::ptrdiff_t>(offset));
        }
        pos += length;
    }
    cursor = pos;
    if (!known) return {RecordStatus::UnknownTemplate, {}, "unknown template index"};
    return {RecordStatus::Message, std::move(msg), {}};
}

} // namespace

std::optional<Bytes> RecordReader::feed(std::span<const std::uint8_t> record, std::string* reason) {
    if (record.empty()) {
        ++malformed_;
        if (reason) *reason = "empty record";
        return std::nullopt;
    }
    std::size_t cursor = 0;
    auto outcome = decode_record(record, cursor, templates_);
    if (outcome.status == RecordStatus::Message) {
        if (cursor != record.size()) {
            // A frame must carry exactly one record.
            if (!templates_.empty() && (record[0] & 0x80) == 0) templates_.pop_back();
            ++malformed_;
            if (reason) *reason = "trailing bytes after record";
            return std::nullopt;
        }
        return std::move(outcome.message);
    }
    if (outcome.status == RecordStatus::UnknownTemplate)
        ++dropped_;
    else
        ++malformed_;
    if (reason) *reason = outcome.reason;
    return std::nullopt;
}

DecodeResult decode(std::span<const std::uint8_t> dump) {
    DecodeResult result;
    std::vector<Bytes> templates;
    std::size_t cursor = 0;
    while (cursor < dump.size()) {
        auto outcome = decode_record(dump, cursor, templates);
        switch (outcome.status) {
        case RecordStatus::Message:
            result.messages.push_back(std::move(outcome.message));
            break;
        case RecordStatus::UnknownTemplate:
            ++result.dropped_deltas;
            break;
        case RecordStatus::Malformed:
        case RecordStatus::Truncated:
            result.error_offset = cursor;
            result.error = outcome.reason;
            return result;
        }
    }
    return result;
}

std::uint32_t max_messages(std::uint32_t ram_bytes, std::uint32_t program_bytes,
                           std::uint32_t avg_msg_bytes) {
    if (program_bytes >= ram_bytes)
        throw std::invalid_argument("program size leaves no message memory");
    if (avg_msg_bytes == 0) throw std::invalid_argument("average message size must be positive");
    return (ram_bytes - program_bytes) / avg_msg_bytes;
}

} // namespace telemote::recordstore
