#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mindkit/common.hpp"

namespace mindkit {

// FNV-1a 64-bit. Enough to detect stale artifacts; not cryptographic.
struct Hasher {
    uint64_t state = 0xcbf29ce484222325ull;

    void update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            state ^= p[i];
            state *= 0x100000001b3ull;
        }
    }
    void update(const std::string& s) { update(s.data(), s.size()); }
    void update(const std::vector<float>& v) { update(v.data(), v.size() * sizeof(float)); }
    void update(uint64_t x) { update(&x, sizeof(x)); }

    std::string hex() const {
        std::ostringstream os;
        os << std::hex << std::setw(16) << std::setfill('0') << state;
        return os.str();
    }
};

inline std::string hash_bytes(const void* data, size_t n) {
    Hasher h;
    h.update(data, n);
    return h.hex();
}

inline std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOFailure("cannot open for hashing: " + path);
    Hasher h;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h.update(buf, static_cast<size_t>(in.gcount()));
    }
    return h.hex();
}

}  // namespace mindkit
