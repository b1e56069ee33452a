#pragma once

// 256-bit content digests (SHA-256 via OpenSSL), printed as lowercase hex.

#include <array>
#include <cstdint>
#include <string>

#include <openssl/evp.h>

#include "common.hpp"

namespace coop {

using digest256 = std::array<uint8_t, 32>;

inline digest256 sha256(const void* data, size_t len) {
    digest256 out{};
    unsigned int n = 0;
    if (EVP_Digest(data, len, out.data(), &n, EVP_sha256(), nullptr) != 1 || n != 32)
        throw validation_error("sha256: digest computation failed");
    return out;
}

inline std::string hex(const digest256& d) {
    static const char* k = "0123456789abcdef";
    std::string s(64, '0');
    for (size_t i = 0; i < d.size(); ++i) {
        s[2 * i] = k[d[i] >> 4];
        s[2 * i + 1] = k[d[i] & 0xf];
    }
    return s;
}

inline std::string sha256_hex(const void* data, size_t len) { return hex(sha256(data, len)); }

} // namespace coop
