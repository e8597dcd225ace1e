// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dreamreader/config.hpp"

namespace dreamreader {

// Root directory for run artifacts: $DREAMREADER_RUNS_DIR when set, else
// "runs" under the working directory.
std::filesystem::path runs_root();

// Everything a finished job reports. Serialized as summary.json in the run
// directory with sorted keys; reruns of the same config produce byte-identical
// summaries (wall clock and memory live in timing.json, which is not hashed).
struct RunReport {
    std::string fingerprint;  // full 64-char hex
    std::string workflow;
    std::string status = "complete";  // "incomplete" when the workflow failed mid-run
    nlohmann::json metrics = nlohmann::json::object();    // flat name -> number
    nlohmann::json tables = nlohmann::json::object();     // rankings, curves, heatmaps
    nlohmann::json artifacts = nlohmann::json::array();   // [{path, sha256}], run-dir relative
    nlohmann::json sweep_coordinate = nlohmann::json::object();

    nlohmann::json to_json() const;
};

// Executes one validated config under <root>/<fingerprint-short-id>/:
// config snapshot, workflow artifacts (images/, activations/, checkpoints/,
// report/), summary.json, timing.json. Workflow errors are rethrown with job
// context after an incomplete summary is written.
RunReport run_job(const ExperimentConfig& cfg, const std::filesystem::path& root);
inline RunReport run_job(const ExperimentConfig& cfg) { return run_job(cfg, runs_root()); }

// Merges finished runs of one workflow: per-run rows sorted by sweep
// coordinate then fingerprint, and mean/std of every metric per coordinate.
// MixedWorkflows when the runs disagree on the workflow.
RunReport aggregate_reports(const std::vector<std::filesystem::path>& run_dirs);

// Writes report/aggregate.json plus a stacked image grid for the aggregate
// under out_dir. run_dirs supply the per-run grids.
void write_aggregate_report(const RunReport& aggregate,
                            const std::vector<std::filesystem::path>& run_dirs,
                            const std::filesystem::path& out_dir);

// Sweep driver: expands, runs every job, aggregates, and stores the combined
// report under <root>/aggregate-<short-id>/.
RunReport run_multirun(const ExperimentConfig& cfg, const std::filesystem::path& root);

}  // namespace dreamreader
