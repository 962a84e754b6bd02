#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "splatloc/errors.hpp"

namespace splatloc::detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

inline void put_f32(std::ostream& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

inline std::uint32_t get_u32(std::istream& in, const std::string& file) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw ParseError(file, 0, "unexpected end of file");
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline double get_f32(std::istream& in, const std::string& file) {
    return static_cast<double>(std::bit_cast<float>(get_u32(in, file)));
}

inline void expect_magic(std::istream& in, const char (&magic)[4], const std::string& file) {
    char b[4];
    if (!in.read(b, 4) || std::memcmp(b, magic, 4) != 0) {
        throw ParseError(file, 0, "bad magic");
    }
}

}  // namespace splatloc::detail
