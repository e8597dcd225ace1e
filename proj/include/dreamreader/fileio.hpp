// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dreamreader {

// Shared binary envelope for all artifact files (.dract, .drvec, .drft,
// .drmap, .drsae):
//
//   [6-byte ascii magic][uint32 LE header length][JSON header][float32 LE body]
//
// Headers are serialized with sorted keys, so identical inputs produce
// byte-identical files. Bodies are raw little-endian float32.
struct RawEnvelope {
    nlohmann::json header;
    std::vector<float> body;
};

void write_envelope(const std::filesystem::path& path, const char magic[6],
                    const nlohmann::json& header, const std::vector<const std::vector<float>*>& blocks);

// Throws CorruptHeader on bad magic/length/JSON, TruncatedBody when the body
// is not a whole number of floats, IOFailure on filesystem errors.
RawEnvelope read_envelope(const std::filesystem::path& path, const char magic[6]);

// Splits an envelope body into consecutively declared blocks; throws
// TruncatedBody if the body is shorter than the declared sizes, CorruptHeader
// if it is longer.
std::vector<std::vector<float>> split_blocks(const RawEnvelope& env,
                                             const std::vector<int64_t>& sizes);

}  // namespace dreamreader
