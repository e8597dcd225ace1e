// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/fingerprint.hpp"

#include <array>
#include <fstream>

#include <openssl/evp.h>

#include "dreamreader/errors.hpp"

namespace dreamreader {

namespace {

std::string to_hex(const unsigned char* digest, unsigned len) {
    static const char* hex = "0123456789abcdef";
    std::string out(static_cast<size_t>(len) * 2, '0');
    for (unsigned i = 0; i < len; ++i) {
        out[2 * i] = hex[digest[i] >> 4];
        out[2 * i + 1] = hex[digest[i] & 0xf];
    }
    return out;
}

struct Sha256 {
    EVP_MD_CTX* ctx;
    Sha256() : ctx(EVP_MD_CTX_new()) {
        require(ctx && EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1, Errc::io_failure,
                "sha256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx); }
    void update(const void* data, size_t len) {
        require(EVP_DigestUpdate(ctx, data, len) == 1, Errc::io_failure, "sha256 update failed");
    }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
        unsigned len = 0;
        require(EVP_DigestFinal_ex(ctx, digest.data(), &len) == 1, Errc::io_failure,
                "sha256 final failed");
        return to_hex(digest.data(), len);
    }
};

}  // namespace

std::string sha256_hex(const void* data, size_t len) {
    Sha256 h;
    h.update(data, len);
    return h.hex();
}

std::string sha256_hex(const std::string& text) { return sha256_hex(text.data(), text.size()); }

std::string file_sha256(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::io_failure, "cannot open " + path);
    Sha256 h;
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<size_t>(in.gcount()));
    }
    return h.hex();
}

std::string canonical_dump(const nlohmann::json& j) { return j.dump(); }

RunFingerprint fingerprint_config(const nlohmann::json& resolved) {
    return RunFingerprint{sha256_hex(canonical_dump(resolved))};
}

}  // namespace dreamreader
