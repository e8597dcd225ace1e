// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "dreamreader/site.hpp"

namespace dreamreader {

struct LoReftHyperparams {
    int steps = 300;
    double learning_rate = 1e-2;
    int batch_size = 1024;
    uint64_t seed = 0;
};

// Low-rank representation intervention Phi(h) = h + R^T (W h + b - R h).
// R has orthonormal rows, so Phi(h) - h always lies in rowspace(R).
struct LoReftParams {
    Eigen::MatrixXd r;  // rank x d, orthonormal rows
    Eigen::MatrixXd w;  // rank x d
    Eigen::VectorXd b;  // rank
    int rank = 0;
    std::vector<HookSite> sites;  // sites + schedule the intervention was trained for
    LoReftHyperparams hp;
    double initial_loss = 0.0;
    double final_loss = 0.0;

    int dim() const { return static_cast<int>(r.cols()); }
};

Eigen::VectorXd loreft_apply(const LoReftParams& p, const Eigen::VectorXd& h);

// Re-orthonormalizes rows via thin QR with a positive-diagonal sign fix.
void reorthonormalize_rows(Eigen::MatrixXd& r);

// Fits Phi to map source feature vectors onto target ones by minimizing
// mean squared error. Initialized at Phi = identity (w = r, b = 0); rows of
// r are re-orthonormalized after every optimizer step.
// Throws RankTooLarge when rank > d, NoDecrease when the loss fails to drop.
LoReftParams fit_loreft(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target, int rank,
                        const LoReftHyperparams& hp);

}  // namespace dreamreader
