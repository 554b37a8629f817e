#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "hat/errors.hpp"

namespace hat::binio {

// Little-endian primitives over streams. The build targets little-endian
// hosts; values are written raw.

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, size_t n, const std::string& what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw TruncatedError("truncated file while reading " + what);
}

inline void write_u16(std::ostream& os, uint16_t v) { write_bytes(os, &v, 2); }
inline void write_u32(std::ostream& os, uint32_t v) { write_bytes(os, &v, 4); }
inline void write_u8(std::ostream& os, uint8_t v) { write_bytes(os, &v, 1); }
inline void write_f32(std::ostream& os, const float* p, size_t n) {
    write_bytes(os, p, n * sizeof(float));
}

inline uint16_t read_u16(std::istream& is, const std::string& what) {
    uint16_t v;
    read_bytes(is, &v, 2, what);
    return v;
}
inline uint32_t read_u32(std::istream& is, const std::string& what) {
    uint32_t v;
    read_bytes(is, &v, 4, what);
    return v;
}
inline uint8_t read_u8(std::istream& is, const std::string& what) {
    uint8_t v;
    read_bytes(is, &v, 1, what);
    return v;
}
inline void read_f32(std::istream& is, float* p, size_t n, const std::string& what) {
    read_bytes(is, p, n * sizeof(float), what);
}

inline void check_magic(std::istream& is, const char expect[4], const std::string& path) {
    char m[4];
    read_bytes(is, m, 4, "magic of " + path);
    if (m[0] != expect[0] || m[1] != expect[1] || m[2] != expect[2] || m[3] != expect[3])
        throw MagicError("bad magic in " + path + ": expected " + std::string(expect, 4) +
                         ", got " + std::string(m, 4));
}

inline void check_eof(std::istream& is, const std::string& path) {
    char c;
    if (is.read(&c, 1))
        throw IoError("trailing bytes after payload in " + path);
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path);
    return is;
}

}  // namespace hat::binio
