// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dreamreader/tensor.hpp"

namespace dreamreader {

// Image/text embedding pair behind the alignment and perceptual metrics.
// Implementations must be deterministic and emit unit-normalized vectors.
class Embedder {
  public:
    virtual ~Embedder() = default;
    virtual std::string id() const = 0;
    virtual std::string version() const = 0;
    virtual Eigen::VectorXd image_embed(const Tensor& image) const = 0;
    virtual Eigen::VectorXd text_embed(const std::vector<int>& tokens) const = 0;
};

// Dependency-free stand-in: seeded random projection of the flattened image,
// seeded per-token vectors summed for text, both L2-normalized. raw_scale
// multiplies the pre-normalization embedding (for rescale-invariance tests).
class FixtureEmbedder final : public Embedder {
  public:
    explicit FixtureEmbedder(uint64_t seed = 0, int dim = 16, double raw_scale = 1.0)
        : seed_(seed), dim_(dim), raw_scale_(raw_scale) {}

    std::string id() const override { return "fixture-embedder"; }
    std::string version() const override { return "1"; }
    Eigen::VectorXd image_embed(const Tensor& image) const override;
    Eigen::VectorXd text_embed(const std::vector<int>& tokens) const override;
    int dim() const { return dim_; }

  private:
    uint64_t seed_;
    int dim_;
    double raw_scale_;
    mutable std::map<int64_t, Eigen::MatrixXd> proj_cache_;  // keyed by input length
};

// Cosine similarity of the two unit embeddings; 0 when either is all-zero.
double alignment_score(const Embedder& embedder, const Tensor& image,
                       const std::vector<int>& tokens);

// Channel-averaged SSIM with an 8x8 uniform window (clipped to the image when
// smaller), C1 = (0.01 L)^2, C2 = (0.03 L)^2.
double ssim(const Tensor& x, const Tensor& y, double dynamic_range = 1.0);

struct FeatureStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;  // unbiased covariance, symmetric
    int64_t n = 0;
};

// Column statistics of an N x e sample matrix; N >= 2 for the covariance.
FeatureStats feature_stats(const Eigen::MatrixXd& rows);

// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^(1/2) S2 S1^(1/2))^(1/2)); eigenvalues
// in [-1e-8, 0) are clipped to zero, below that NonPSD is raised.
double frechet_distance(const FeatureStats& s1, const FeatureStats& s2);

double perceptual_distance(const Embedder& embedder, const Tensor& x, const Tensor& y);

struct DiversitySummary {
    double mean_pairwise_distance = 0.0;
    double embedding_trace_variance = 0.0;
};

// Mean perceptual distance over all unordered pairs plus the trace of the
// population embedding covariance. Needs >= 2 images.
DiversitySummary diversity_summary(const Embedder& embedder, const std::vector<Tensor>& images);

// Registry keys accepted in config metric lists.
bool is_known_metric(const std::string& name);
const std::vector<std::string>& known_metrics();

}  // namespace dreamreader
