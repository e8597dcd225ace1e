// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace dreamreader {

class PairedBatchIterator;

enum class MapperFamily { identity, affine_ridge, mlp };

const char* mapper_family_name(MapperFamily f);
MapperFamily mapper_family_from_name(const std::string& name);

struct MapperHyperparams {
    int steps = 1000;
    double learning_rate = 1e-4;
    int log_interval = 100;
    int batch_size = 32;
    double val_fraction = 0.2;
    uint64_t seed = 0;
    std::string precision = "f32";  // artifact dtype tag; training math is f64
};

// Declarative mapper description. validate() performs no allocation, so the
// full-scale dims (77*768 -> 11*768 -> 4*64*64) pass through the config
// validator without building anything.
struct MapperSpec {
    MapperFamily family = MapperFamily::affine_ridge;
    int input_dim = 0;
    int output_dim = 0;
    int hidden_dim = 0;
    double lambda = 0.0;
    MapperHyperparams hp;

    void validate() const;
};

struct LossPoint {
    int step = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct TrainedMapper {
    MapperSpec spec;
    Eigen::MatrixXd affine;  // (p+1) x q, bias in the last row
    Eigen::MatrixXd w1;      // p x hidden
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;      // hidden x q
    Eigen::VectorXd b2;
    std::vector<LossPoint> curve;
    std::vector<int64_t> val_indices;  // record positions held out for validation
    double initial_val_loss = std::numeric_limits<double>::quiet_NaN();
    double final_val_loss = std::numeric_limits<double>::quiet_NaN();
    std::string source_fingerprint;
    std::string target_fingerprint;

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd apply_batch(const Eigen::MatrixXd& xs) const;  // N x p -> N x q
};

TrainedMapper make_identity_mapper(int dim);

// Closed-form ridge with an appended constant-1 column; the bias row carries
// no penalty. SingularSystem when lambda = 0 and the augmented normal matrix
// is rank-deficient.
TrainedMapper fit_affine_ridge(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                               double lambda);

// Drains the iterator, holds out a seeded validation split, and runs
// minibatch Adam on MSE. Logs train/val loss every log_interval steps.
// NoDecrease when the final validation loss fails to beat the initial one.
TrainedMapper train_mlp_mapper(PairedBatchIterator& pairs, const MapperSpec& spec);

// Validation MSE convention shared by training and recomputation checks:
// mean over rows of ||apply(x) - y||^2.
double mapper_mse(const TrainedMapper& mapper, const Eigen::MatrixXd& x,
                  const Eigen::MatrixXd& y);

void save_mapper(const TrainedMapper& mapper, const std::filesystem::path& path);
TrainedMapper load_mapper(const std::filesystem::path& path);

}  // namespace dreamreader
