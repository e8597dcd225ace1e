// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dreamreader/loreft.hpp"
#include "dreamreader/model.hpp"
#include "dreamreader/probe.hpp"

namespace dreamreader {

// A direction in one site's activation space, with extraction provenance.
struct SteeringVector {
    enum class Method { caa, ksteer, external };

    HookSite site;
    Eigen::VectorXf direction;
    Method method = Method::external;
    double norm = 0.0;
    nlohmann::json provenance;  // prompt sets, probe id, or caller-supplied
};

const char* steering_method_name(SteeringVector::Method m);

// Mean feature vector per record (mean over non-feature axes), accumulated
// in a canonical (prompt_id, timestep) order so extraction is bit-exactly
// permutation-invariant over each record set.
Eigen::VectorXd mean_activation(const std::vector<ActivationRecord>& records,
                                int feature_axis);

// direction = mean(positive) - mean(negative). EmptySet on an empty side,
// ZeroDirection when the means coincide.
SteeringVector extract_caa(const std::vector<ActivationRecord>& positive,
                           const std::vector<ActivationRecord>& negative,
                           const HookSite& site, int feature_axis);

// Reduces records to mean feature vectors and trains the two-layer probe.
ProbeParams train_probe(const std::vector<ActivationRecord>& records,
                        const std::vector<int>& labels, int feature_axis,
                        const ProbeHyperparams& hp);

// Gradient direction evaluated once at the mean captured activation, for
// fixed-mode K-Steer deployment.
Eigen::VectorXf fixed_ksteer_direction(const std::vector<ActivationRecord>& records,
                                       int feature_axis, const ProbeParams& probe,
                                       int target_class);

// Captures aligned (plain, concept) activations at the sites/schedule and
// fits the low-rank intervention mapping plain to concept activations.
LoReftParams train_loreft(DiffusionAdapter& adapter,
                          const std::vector<std::pair<Prompt, Prompt>>& concept_plain_pairs,
                          const std::vector<HookSite>& sites, int rank,
                          const LoReftHyperparams& hp);

// Application: zero strength reproduces the baseline bit-exactly in every
// mode. Sites carry their schedules; an empty site list falls back to the
// vector's own site.
Tensor apply_steering(DiffusionAdapter& adapter, const Prompt& prompt, uint64_t seed,
                      const SteeringVector& vector, const std::vector<HookSite>& sites,
                      double strength);

Tensor apply_steering(DiffusionAdapter& adapter, const Prompt& prompt, uint64_t seed,
                      const ProbeParams& probe, int target_class,
                      const std::vector<HookSite>& sites, double strength,
                      const Eigen::VectorXf* fixed_direction = nullptr);

Tensor apply_steering(DiffusionAdapter& adapter, const Prompt& prompt, uint64_t seed,
                      const LoReftParams& params, double strength);

void save_steering_vector(const SteeringVector& v, const std::filesystem::path& path);
SteeringVector load_steering_vector(const std::filesystem::path& path);

void save_loreft(const LoReftParams& p, const std::filesystem::path& path);
LoReftParams load_loreft(const std::filesystem::path& path);

}  // namespace dreamreader
