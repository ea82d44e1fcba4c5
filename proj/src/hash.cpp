#include "strkit/hash.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "strkit/errors.hpp"

namespace strkit {

void ContentHash::update(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = state_;
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<uint64_t>(p[i]);
        h *= 0x100000001b3ull;
    }
    state_ = h;
}

std::string ContentHash::hex() const { return hash_hex(state_); }

uint64_t fnv1a64(const void* data, size_t n) {
    ContentHash h;
    h.update(data, n);
    return h.value();
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::string hash_file_hex(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw data_error("cannot open file for hashing: " + path);
    ContentHash h;
    std::vector<char> buf(1 << 16);
    while (f) {
        f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto got = f.gcount();
        if (got > 0) h.update(buf.data(), static_cast<size_t>(got));
    }
    return h.hex();
}

} // namespace strkit
