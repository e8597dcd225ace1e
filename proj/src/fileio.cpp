// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/fileio.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dreamreader/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "artifact files are little-endian; big-endian hosts are unsupported");

namespace dreamreader {

void write_envelope(const std::filesystem::path& path, const char magic[6],
                    const nlohmann::json& header,
                    const std::vector<const std::vector<float>*>& blocks) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io_failure, "cannot open " + path.string() + " for writing");

    const std::string hdr = header.dump();  // object keys are stored sorted
    const uint32_t hdr_len = static_cast<uint32_t>(hdr.size());
    out.write(magic, 6);
    out.write(reinterpret_cast<const char*>(&hdr_len), 4);
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    for (const auto* block : blocks)
        out.write(reinterpret_cast<const char*>(block->data()),
                  static_cast<std::streamsize>(block->size() * sizeof(float)));
    out.flush();
    require(out.good(), Errc::io_failure, "short write to " + path.string());
}

RawEnvelope read_envelope(const std::filesystem::path& path, const char magic[6]) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::io_failure, "cannot open " + path.string());

    char got[6];
    in.read(got, 6);
    require(in.gcount() == 6 && std::memcmp(got, magic, 6) == 0, Errc::corrupt_header,
            "bad magic in " + path.string());

    uint32_t hdr_len = 0;
    in.read(reinterpret_cast<char*>(&hdr_len), 4);
    require(in.gcount() == 4, Errc::corrupt_header, "missing header length in " + path.string());

    std::string hdr(hdr_len, '\0');
    in.read(hdr.data(), hdr_len);
    require(static_cast<uint32_t>(in.gcount()) == hdr_len, Errc::corrupt_header,
            "truncated header in " + path.string());

    RawEnvelope env;
    env.header = nlohmann::json::parse(hdr, nullptr, /*allow_exceptions=*/false);
    require(!env.header.is_discarded(), Errc::corrupt_header,
            "header is not valid JSON in " + path.string());

    std::vector<char> rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(rest.size() % sizeof(float) == 0, Errc::truncated_body,
            "body of " + path.string() + " is not a whole number of float32 values");
    env.body.resize(rest.size() / sizeof(float));
    if (!rest.empty()) std::memcpy(env.body.data(), rest.data(), rest.size());
    return env;
}

std::vector<std::vector<float>> split_blocks(const RawEnvelope& env,
                                             const std::vector<int64_t>& sizes) {
    int64_t total = 0;
    for (int64_t s : sizes) total += s;
    require(static_cast<int64_t>(env.body.size()) >= total, Errc::truncated_body,
            "body holds " + std::to_string(env.body.size()) + " floats, header declares " +
                std::to_string(total));
    require(static_cast<int64_t>(env.body.size()) == total, Errc::corrupt_header,
            "body longer than declared");
    std::vector<std::vector<float>> blocks;
    blocks.reserve(sizes.size());
    int64_t off = 0;
    for (int64_t s : sizes) {
        blocks.emplace_back(env.body.begin() + off, env.body.begin() + off + s);
        off += s;
    }
    return blocks;
}

}  // namespace dreamreader
