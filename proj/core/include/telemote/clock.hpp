#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>

namespace telemote {

/// Source of "now" for components that stamp files and directories.
/// Services run on the system clock; simulations substitute a SimClock
/// driven by virtual time.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::int64_t now_unix() const = 0;
};

class SystemClock final : public Clock {
public:
    std::int64_t now_unix() const override;
};

class SimClock final : public Clock {
public:
    explicit SimClock(std::int64_t start_unix = 0) : t_(start_unix) {}
    std::int64_t now_unix() const override { return t_.load(std::memory_order_acquire); }
    void set(std::int64_t t) { t_.store(t, std::memory_order_release); }

private:
    std::atomic<std::int64_t> t_;
};

namespace date_util {

/// Days since 1970-01-01 for a UTC unix timestamp (floor division).
std::int64_t unix_to_days(std::int64_t unix_s);

/// "YYYYMMDD" in UTC.
std::string utc_yyyymmdd(std::int64_t unix_s);

/// "HHMMSS" in UTC.
std::string utc_hhmmss(std::int64_t unix_s);

/// Parses "YYYYMMDD" to days since 1970-01-01. Rejects malformed names.
std::optional<std::int64_t> parse_yyyymmdd_days(const std::string& s);

} // namespace date_util
} // namespace telemote
