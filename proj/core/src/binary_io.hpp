#pragma once

// Little-endian packing helpers shared by the EVT1 and checkpoint codecs.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace hess::binio {

template <typename T>
inline void store_le(std::vector<unsigned char>& buf, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

inline void store_u16(std::vector<unsigned char>& buf, std::uint16_t v) { store_le(buf, v); }
inline void store_u32(std::vector<unsigned char>& buf, std::uint32_t v) { store_le(buf, v); }
inline void store_u64(std::vector<unsigned char>& buf, std::uint64_t v) { store_le(buf, v); }
inline void store_f64(std::vector<unsigned char>& buf, double v) { store_u64(buf, std::bit_cast<std::uint64_t>(v)); }

template <typename T>
inline T load_le(const unsigned char* p) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
    return v;
}

inline std::uint16_t load_u16(const unsigned char* p) { return load_le<std::uint16_t>(p); }
inline std::uint32_t load_u32(const unsigned char* p) { return load_le<std::uint32_t>(p); }
inline std::uint64_t load_u64(const unsigned char* p) { return load_le<std::uint64_t>(p); }
inline double load_f64(const unsigned char* p) { return std::bit_cast<double>(load_u64(p)); }

/// Sequential reader over an in-memory buffer; throws on overrun.
class Reader {
  public:
    Reader(const std::vector<unsigned char>& buf, std::string context) : buf_(buf), context_(std::move(context)) {}

    const unsigned char* take(std::size_t n) {
        if (pos_ + n > buf_.size()) throw std::runtime_error(context_ + ": unexpected end of data");
        const unsigned char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint32_t u32() { return load_u32(take(4)); }
    std::uint64_t u64() { return load_u64(take(8)); }
    double f64() { return load_f64(take(8)); }
    bool done() const { return pos_ == buf_.size(); }

  private:
    const std::vector<unsigned char>& buf_;
    std::string context_;
    std::size_t pos_ = 0;
};

inline std::vector<unsigned char> slurp(std::istream& in) {
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace hess::binio
