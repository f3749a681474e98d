#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "spikemix/error.hpp"

namespace spikemix::io {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_le(std::ostream& out, T v) {
    write_bytes(out, &v, sizeof v);
}

// Reads exactly n bytes; returns false on a clean EOF before the first byte
// when `eof_ok`, throws TruncatedError on a short read otherwise.
inline bool read_bytes(std::istream& in, void* p, std::size_t n, const std::string& what, bool eof_ok = false) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got == n) return true;
    if (eof_ok && got == 0) return false;
    throw TruncatedError(what + ": truncated (wanted " + std::to_string(n) + " bytes, got " + std::to_string(got) + ")");
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
    T v{};
    read_bytes(in, &v, sizeof v, what);
    return v;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return in;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

inline void finish(std::ofstream& out, const std::string& path) {
    out.flush();
    if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace spikemix::io
