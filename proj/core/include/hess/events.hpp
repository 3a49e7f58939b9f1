#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace hess {

struct Event {
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::uint64_t t = 0;  // microseconds
    std::int8_t p = 1;    // -1 or +1

    bool operator==(const Event&) const = default;
};

/// Events in nondecreasing timestamp order on a width×height sensor.
struct EventStream {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<Event> events;

    bool operator==(const EventStream&) const = default;
};

/// Malformed event data. `record()` is the offending event index, or -1 when
/// the problem is not tied to a single record.
class EventFormatError : public std::runtime_error {
  public:
    EventFormatError(const std::string& what, long long record = -1)
        : std::runtime_error(what), record_(record) {}
    long long record() const { return record_; }

  private:
    long long record_;
};

/// Throws EventFormatError on out-of-geometry events, bad polarity or
/// decreasing timestamps.
void validate(const EventStream& stream);

/*
 * EVT1 layout (little-endian):
 *   "EVT1" | u32 width | u32 height | u64 count
 *   count × { u16 x | u16 y | u64 t | i8 p | i8 pad=0 }
 */
EventStream read_evt1(const std::filesystem::path& path);
void write_evt1(const EventStream& stream, const std::filesystem::path& path);

/// CSV with header `x,y,t,p`. Geometry is not stored in CSV, so it must be
/// supplied by the caller.
EventStream read_events_csv(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height);
void write_events_csv(const EventStream& stream, const std::filesystem::path& path);

/// Dispatch on extension: `.csv` reads CSV (geometry required), anything
/// else is EVT1.
EventStream read_events(const std::filesystem::path& path, std::uint32_t width = 0, std::uint32_t height = 0);
void write_events(const EventStream& stream, const std::filesystem::path& path);

}  // namespace hess
