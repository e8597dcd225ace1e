// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dreamreader {

// One feature vector drawn from a capture, with the provenance needed for
// feature cards.
struct ActivationSample {
    Eigen::VectorXf x;
    std::string prompt_id;
    int timestep = 0;
};

// Sequential source of activation samples. reset() rewinds to the start so
// training and feature-card passes can share one source.
class SampleStream {
  public:
    virtual ~SampleStream() = default;
    virtual std::optional<ActivationSample> next() = 0;
    virtual void reset() = 0;
};

class VectorSampleStream final : public SampleStream {
  public:
    explicit VectorSampleStream(std::vector<ActivationSample> samples)
        : samples_(std::move(samples)) {}
    std::optional<ActivationSample> next() override {
        if (pos_ >= samples_.size()) return std::nullopt;
        return samples_[pos_++];
    }
    void reset() override { pos_ = 0; }

  private:
    std::vector<ActivationSample> samples_;
    size_t pos_ = 0;
};

enum class SAEVariant { topk, gated, matryoshka };

struct SAEHyperparams {
    SAEVariant variant = SAEVariant::topk;
    int steps = 2000;
    int batch_size = 64;
    double learning_rate = 1e-3;
    uint64_t seed = 0;
    int dead_window = 1000;               // trailing samples scanned for dead features
    std::string activation_source = "raw";  // tag only: raw vs residual capture
};

// Top-k sparse autoencoder. Encoder: relu(W_enc (x - b_dec) + b_enc) followed
// by keep-k-largest (ties keep the lower index). Decoder columns stay unit-norm.
struct SAEBundle {
    int d = 0;  // input dim
    int m = 0;  // dictionary size
    int k = 0;  // sparsity level
    Eigen::MatrixXd w_enc;  // m x d
    Eigen::VectorXd b_enc;  // m
    Eigen::MatrixXd w_dec;  // d x m, unit-norm columns
    Eigen::VectorXd b_dec;  // d
    std::string source_site;  // site the training activations came from

    struct Stats {
        int steps = 0;
        double initial_loss = 0.0;
        double final_loss = 0.0;
        double dead_feature_rate = 0.0;
        double max_col_norm_dev = 0.0;  // worst unit-norm deviation seen after any step
        std::string activation_source = "raw";
    } stats;
};

Eigen::VectorXd sae_encode(const SAEBundle& b, const Eigen::VectorXd& x);
Eigen::VectorXd sae_decode(const SAEBundle& b, const Eigen::VectorXd& z);

SAEBundle train_sae(SampleStream& stream, int d, int m, int k, const SAEHyperparams& hp);

struct FeatureEdit {
    enum class Mode { ablate, scale };
    int index = 0;
    Mode mode = Mode::ablate;
    double factor = 1.0;
};

// decode(edit(encode(x))); an empty edit list yields the plain reconstruction.
// Throws IndexOutOfRange if an edit addresses a feature >= m.
Eigen::VectorXd sae_edit_apply(const SAEBundle& b, const std::vector<FeatureEdit>& edits,
                               const Eigen::VectorXd& x);

struct FeatureCard {
    struct Hit {
        std::string prompt_id;
        int timestep = 0;
        double value = 0.0;
    };
    int feature = 0;
    std::vector<Hit> top;       // sorted descending by value
    double mean_activation = 0.0;
    double frequency = 0.0;     // fraction of samples with nonzero activation
    bool dead = false;
};

std::vector<FeatureCard> build_feature_cards(const SAEBundle& b, SampleStream& stream, int top_n);

void save_sae(const SAEBundle& b, const std::filesystem::path& path);
SAEBundle load_sae(const std::filesystem::path& path);

}  // namespace dreamreader
