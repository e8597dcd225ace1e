// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dreamreader/activation_store.hpp"
#include "dreamreader/metrics.hpp"
#include "dreamreader/model.hpp"

namespace dreamreader {

// Sweep description: every (site, schedule) combination is intervened on
// independently and scored against the per-prompt baseline.
struct LocalizationPlan {
    enum class Kind { scale, zero, corrupt, replace };

    std::vector<HookSite> sites;  // per-site schedule fields are overridden
    Kind kind = Kind::scale;
    double strength = 1.0;
    std::vector<TimestepSchedule> schedules;
    std::vector<Prompt> prompts;
    std::vector<std::string> metrics;  // first entry is the ranking key
    uint64_t seed = 0;
    uint64_t noise_seed = 0;
    const ActivationFile* donor = nullptr;  // replace kind reads payloads here

    void validate(const DiffusionAdapter& adapter) const;
};

const char* localization_kind_name(LocalizationPlan::Kind k);

// Standalone edit primitive: scale -> a*h, zero -> 0, corrupt -> h +
// noise(seed, strength*std(h)), replace -> donor payload (ShapeMismatch /
// MissingDonor).
Tensor apply_intervention(LocalizationPlan::Kind kind, double strength, const Tensor& h,
                          const Tensor* donor = nullptr, uint64_t noise_seed = 0,
                          const std::string& site_tag = "", int timestep = 0);

struct InfluenceEntry {
    std::string site;                          // display string
    std::vector<int> schedule;
    std::map<std::string, double> delta_mean;  // metric -> mean over prompts
    std::map<std::string, double> delta_std;   // population std
    int rank = 0;
};

struct InfluenceReport {
    std::vector<std::string> metrics;
    std::map<std::string, double> baseline_mean;
    std::map<std::string, double> baseline_std;
    std::vector<InfluenceEntry> entries;  // sorted by rank ascending

    nlohmann::json to_json() const;
};

// One intervened run per (site, schedule, prompt), deltas against the
// shared-seed baseline, ranked by |mean delta| of the first metric with ties
// broken by site path then schedule.
InfluenceReport run_localization(DiffusionAdapter& adapter, const LocalizationPlan& plan,
                                 const Embedder& embedder);

}  // namespace dreamreader
