// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace dreamreader {

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& text);
std::string file_sha256(const std::string& path);

// Canonical serialization: nlohmann objects iterate in sorted key order and
// numbers print in shortest round-trip form, so semantically equal documents
// dump to identical bytes.
std::string canonical_dump(const nlohmann::json& j);

// Identity of a resolved experiment: hash of the canonical config snapshot
// (covers model identifier and revision, dataset version, seeds, splits, and
// the full intervention specification). The short id names the run directory.
struct RunFingerprint {
    std::string hex;  // 64 hex chars

    std::string short_id() const { return hex.substr(0, 16); }
    bool operator==(const RunFingerprint&) const = default;
};

RunFingerprint fingerprint_config(const nlohmann::json& resolved);

}  // namespace dreamreader
