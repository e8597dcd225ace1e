// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace dreamreader {

struct ProbeHyperparams {
    int hidden_dim = 16;
    int steps = 400;
    double learning_rate = 1e-2;
    uint64_t seed = 0;
};

// Two affine layers with a tanh between, ending in 2 logits. tanh keeps the
// classifier smooth, so steering gradients admit a finite-difference check.
struct ProbeParams {
    Eigen::MatrixXd w1;  // hidden x d
    Eigen::VectorXd b1;  // hidden
    Eigen::MatrixXd w2;  // 2 x hidden
    Eigen::VectorXd b2;  // 2
    ProbeHyperparams hp;
    double final_train_accuracy = 0.0;

    int input_dim() const { return static_cast<int>(w1.cols()); }
};

Eigen::Vector2d probe_logits(const ProbeParams& p, const Eigen::VectorXd& h);

// Cross-entropy training on (X: N x d, labels in {0,1}), full-batch Adam.
// Deterministic given (data, seed, hyperparameters).
// Throws DegenerateLabels unless each class has at least two examples.
ProbeParams train_probe_core(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                             const ProbeHyperparams& hp);

// Gradient of the target-class logit at h, L2-normalized.
// Throws ZeroGradient when the gradient vanishes (e.g. a constant probe).
Eigen::VectorXd kst_direction(const ProbeParams& p, const Eigen::VectorXd& h, int target_class);

}  // namespace dreamreader
