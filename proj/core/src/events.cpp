#include "hess/events.hpp"

#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"

namespace hess {

namespace {

constexpr std::array<char, 4> kMagic{'E', 'V', 'T', '1'};
constexpr std::size_t kRecordBytes = 14;

std::string at_record(std::size_t i) { return " at record " + std::to_string(i); }

void check_event(const EventStream& s, std::size_t i, std::uint64_t prev_t) {
    const Event& e = s.events[i];
    if (e.x >= s.width || e.y >= s.height) {
        throw EventFormatError("event (" + std::to_string(e.x) + "," + std::to_string(e.y) + ") outside " +
                                   std::to_string(s.width) + "x" + std::to_string(s.height) + " sensor" +
                                   at_record(i),
                               static_cast<long long>(i));
    }
    if (e.p != 1 && e.p != -1) {
        throw EventFormatError("polarity " + std::to_string(e.p) + " is not +1/-1" + at_record(i),
                               static_cast<long long>(i));
    }
    if (i > 0 && e.t < prev_t) {
        throw EventFormatError("timestamp decreases" + at_record(i), static_cast<long long>(i));
    }
}

}  // namespace

void validate(const EventStream& stream) {
    for (std::size_t i = 0; i < stream.events.size(); ++i)
        check_event(stream, i, i ? stream.events[i - 1].t : 0);
}

EventStream read_evt1(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EventFormatError("cannot open " + path.string());
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    if (!in || magic != kMagic) throw EventFormatError(path.string() + ": bad magic, expected EVT1");

    std::array<unsigned char, 16> header{};
    in.read(reinterpret_cast<char*>(header.data()), header.size());
    if (!in) throw EventFormatError(path.string() + ": truncated header");
    EventStream s;
    s.width = binio::load_u32(header.data());
    s.height = binio::load_u32(header.data() + 4);
    const std::uint64_t count = binio::load_u64(header.data() + 8);

    s.events.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 24)));
    std::array<unsigned char, kRecordBytes> rec{};
    for (std::uint64_t i = 0; i < count; ++i) {
        in.read(reinterpret_cast<char*>(rec.data()), rec.size());
        if (!in) {
            throw EventFormatError(path.string() + ": truncated" + at_record(i), static_cast<long long>(i));
        }
        Event e;
        e.x = binio::load_u16(rec.data());
        e.y = binio::load_u16(rec.data() + 2);
        e.t = binio::load_u64(rec.data() + 4);
        e.p = static_cast<std::int8_t>(rec[12]);
        s.events.push_back(e);
        check_event(s, s.events.size() - 1, i ? s.events[i - 1].t : 0);
    }
    return s;
}

void write_evt1(const EventStream& stream, const std::filesystem::path& path) {
    validate(stream);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    std::vector<unsigned char> buf;
    buf.reserve(20 + stream.events.size() * kRecordBytes);
    buf.insert(buf.end(), kMagic.begin(), kMagic.end());
    binio::store_u32(buf, stream.width);
    binio::store_u32(buf, stream.height);
    binio::store_u64(buf, stream.events.size());
    for (const auto& e : stream.events) {
        binio::store_u16(buf, e.x);
        binio::store_u16(buf, e.y);
        binio::store_u64(buf, e.t);
        buf.push_back(static_cast<unsigned char>(e.p));
        buf.push_back(0);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

EventStream read_events_csv(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height) {
    std::ifstream in(path);
    if (!in) throw EventFormatError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw EventFormatError(path.string() + ": empty CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "x,y,t,p") throw EventFormatError(path.string() + ": expected header 'x,y,t,p'");

    EventStream s;
    s.width = width;
    s.height = height;
    std::size_t index = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        long long fields[4];
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (int f = 0; f < 4; ++f) {
            auto [next, ec] = std::from_chars(p, end, fields[f]);
            if (ec != std::errc() || (f < 3 && (next == end || *next != ',')) || (f == 3 && next != end)) {
                throw EventFormatError(path.string() + ": malformed line" + at_record(index),
                                       static_cast<long long>(index));
            }
            p = next + 1;
        }
        if (fields[0] < 0 || fields[1] < 0 || fields[0] > 0xFFFF || fields[1] > 0xFFFF || fields[2] < 0) {
            throw EventFormatError(path.string() + ": field out of range" + at_record(index),
                                   static_cast<long long>(index));
        }
        Event e;
        e.x = static_cast<std::uint16_t>(fields[0]);
        e.y = static_cast<std::uint16_t>(fields[1]);
        e.t = static_cast<std::uint64_t>(fields[2]);
        e.p = static_cast<std::int8_t>(fields[3] == 1 ? 1 : (fields[3] == -1 ? -1 : 0));
        s.events.push_back(e);
        check_event(s, index, index ? s.events[index - 1].t : 0);
        ++index;
    }
    return s;
}

void write_events_csv(const EventStream& stream, const std::filesystem::path& path) {
    validate(stream);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "x,y,t,p\n";
    for (const auto& e : stream.events) out << e.x << ',' << e.y << ',' << e.t << ',' << int(e.p) << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

EventStream read_events(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height) {
    if (path.extension() == ".csv") {
        if (width == 0 || height == 0) throw EventFormatError("CSV events need an explicit sensor geometry");
        return read_events_csv(path, width, height);
    }
    return read_evt1(path);
}

void write_events(const EventStream& stream, const std::filesystem::path& path) {
    if (path.extension() == ".csv") {
        write_events_csv(stream, path);
    } else {
        write_evt1(stream, path);
    }
}

}  // namespace hess
