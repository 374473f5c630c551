#pragma once

#include <atomic>
#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace eltex {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// Formats as RFC 3339 in UTC, e.g. "2024-05-01T12:00:00Z". Milliseconds are
/// emitted only when non-zero.
std::string format_rfc3339(Timestamp t);

/// Accepts "YYYY-MM-DDTHH:MM:SS[.frac](Z|+HH:MM|-HH:MM)"; a space is accepted
/// in place of 'T'. Returns nullopt on malformed input.
std::optional<Timestamp> parse_rfc3339(std::string_view text);

class Clock {
public:
    virtual ~Clock() = default;
    virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
public:
    Timestamp now() const override;
};

/// Clock under test control.
class ManualClock final : public Clock {
public:
    explicit ManualClock(Timestamp start = Timestamp{}) : now_(start.time_since_epoch().count()) {}

    Timestamp now() const override { return Timestamp{std::chrono::milliseconds{now_.load()}}; }
    void set(Timestamp t) { now_ = t.time_since_epoch().count(); }
    void advance(std::chrono::milliseconds d) { now_ += d.count(); }

private:
    std::atomic<std::int64_t> now_;
};

}  // namespace eltex
