// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dreamreader/mapper.hpp"
#include "dreamreader/model.hpp"
#include "dreamreader/steering.hpp"

namespace dreamreader {

// Captures site_a on adapter_a, maps each scheduled activation, injects it
// as a replace-intervention at site_b of adapter_b, and decodes adapter_b's
// image. Mapper dims must match both flattened site shapes (DimMismatch).
// site_a's schedule drives the capture; site_b's schedule drives injection.
Tensor stitch_generate(DiffusionAdapter& adapter_a, DiffusionAdapter& adapter_b,
                       const TrainedMapper& mapper, const HookSite& site_a,
                       const HookSite& site_b, const Prompt& prompt, uint64_t seed);

// Finite-difference transport through the mapper: M(anchor + v) - M(anchor).
// Exactly anchor-invariant for affine mappers. The result keeps the source
// provenance; target_site rebinds it for application in model B.
SteeringVector transfer_steering(const SteeringVector& vector, const TrainedMapper& mapper,
                                 const Eigen::VectorXf& anchor,
                                 std::optional<HookSite> target_site = std::nullopt);

struct CompatibilityHeatmap {
    std::vector<std::string> source_sites;  // display strings, row order
    std::vector<std::string> target_sites;  // column order
    Eigen::MatrixXd val_loss;               // rows = source, cols = target
};

// Fits one mapper per (source, target) site pair on paired captures over the
// prompts and records its validation loss. Grid is complete and
// deterministic given the spec's seed.
CompatibilityHeatmap compatibility_sweep(DiffusionAdapter& adapter_a,
                                         DiffusionAdapter& adapter_b,
                                         const std::vector<HookSite>& source_sites,
                                         const std::vector<HookSite>& target_sites,
                                         const std::vector<Prompt>& prompts,
                                         const MapperSpec& spec);

}  // namespace dreamreader
