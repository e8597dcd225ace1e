// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dreamreader/site.hpp"

namespace dreamreader {

enum class Workflow { localize, steer, stitch_train, stitch_steer, sae_train, sae_intervene };

const char* workflow_name(Workflow w);
Workflow workflow_from_name(const std::string& name);

// A validated experiment description. `resolved` is the full snapshot —
// defaults filled, overrides applied — and is the exact document the run
// fingerprint hashes. `sweep_coordinate` is empty for plain runs and holds
// the axis assignment for jobs produced by expand_sweep.
struct ExperimentConfig {
    Workflow workflow = Workflow::localize;
    nlohmann::json resolved;
    nlohmann::json sweep_coordinate = nlohmann::json::object();

    const nlohmann::json& at(const std::string& dotted) const;
    int64_t geti(const std::string& dotted) const;
    double getd(const std::string& dotted) const;
    std::string gets(const std::string& dotted) const;
    bool getb(const std::string& dotted) const;
};

// Dotted-path helpers over nested JSON objects ("a.b.c"). Paths address
// object members only, never array elements.
const nlohmann::json* find_by_path(const nlohmann::json& root, const std::string& dotted);
void set_by_path(nlohmann::json& root, const std::string& dotted, nlohmann::json value);

// Override value grammar: anything that parses as JSON keeps that type;
// everything else is taken as a bare string. "seed=5" sets an integer,
// "method.kind=zero" a string.
nlohmann::json parse_override_value(const std::string& text);

// Builds a config from an in-memory document: applies "a.b.c=value"
// overrides, fills workflow defaults, then validates the schema. Unknown
// keys anywhere raise UnknownKey; wrong types raise TypeErrorForKey.
ExperimentConfig make_config(nlohmann::json raw, const std::vector<std::string>& overrides = {});

// Same, reading the document from a JSON file. Unreadable or malformed
// files raise ParseError.
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {});

// Cartesian expansion of the sweep section into independent jobs. Axes are
// visited in lexicographic key order, values in declared order, with the
// first key varying slowest. Each job has the axis value applied, its
// sweep section cleared, and its coordinate recorded. No axes → one job.
std::vector<ExperimentConfig> expand_sweep(const ExperimentConfig& cfg);

// Schedule grammar used in configs: "all", "2", "0,2,3", or "1-3"
// (inclusive range). Resolved against the adapter step count.
TimestepSchedule parse_schedule_spec(const std::string& spec, int num_steps);

}  // namespace dreamreader
