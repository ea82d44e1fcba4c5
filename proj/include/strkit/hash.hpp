#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace strkit {

// 64-bit FNV-1a, used as the content hash for corpora, checkpoints and
// manifest binding. Hex-encoded as 16 lowercase digits.
class ContentHash {
public:
    ContentHash() = default;

    void update(const void* data, size_t n);
    void update(const std::string& s) { update(s.data(), s.size()); }

    uint64_t value() const { return state_; }
    std::string hex() const;

private:
    uint64_t state_ = 0xcbf29ce484222325ull;
};

uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64(const std::string& s);
std::string hash_hex(uint64_t h);

// Hash of a file's raw bytes. Throws data_error if the file cannot be read.
std::string hash_file_hex(const std::string& path);

} // namespace strkit
