// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "dreamreader/rng.hpp"

namespace dreamreader {

Eigen::VectorXd FixtureEmbedder::image_embed(const Tensor& image) const {
    const int64_t n = image.size();
    require(n > 0, Errc::shape_mismatch, "image_embed: empty image");
    auto it = proj_cache_.find(n);
    if (it == proj_cache_.end()) {
        SeededRng rng(mix_seed(seed_, "image_proj", n));
        it = proj_cache_
                 .emplace(n, normal_matrix<double>(rng, dim_, n,
                                                   1.0 / std::sqrt(static_cast<double>(n))))
                 .first;
    }
    Eigen::VectorXd raw = raw_scale_ * (it->second * image.as_vector().cast<double>());
    const double norm = raw.norm();
    return norm > 0.0 ? Eigen::VectorXd(raw / norm) : Eigen::VectorXd::Zero(dim_);
}

Eigen::VectorXd FixtureEmbedder::text_embed(const std::vector<int>& tokens) const {
    Eigen::VectorXd raw = Eigen::VectorXd::Zero(dim_);
    for (int tok : tokens) {
        if (tok == 0) continue;  // padding carries no content
        SeededRng rng(mix_seed(seed_, "text_token", tok));
        raw += normal_vector<double>(rng, dim_);
    }
    raw *= raw_scale_;
    const double norm = raw.norm();
    return norm > 0.0 ? Eigen::VectorXd(raw / norm) : Eigen::VectorXd::Zero(dim_);
}

double alignment_score(const Embedder& embedder, const Tensor& image,
                       const std::vector<int>& tokens) {
    return embedder.image_embed(image).dot(embedder.text_embed(tokens));
}

namespace {
// SSIM of one channel given as an h x w double matrix.
double ssim_channel(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double c1, double c2) {
    const int h = static_cast<int>(x.rows());
    const int w = static_cast<int>(x.cols());
    const int wh = std::min(8, h);
    const int ww = std::min(8, w);
    const double inv_n = 1.0 / (static_cast<double>(wh) * ww);

    double total = 0.0;
    int windows = 0;
    for (int r = 0; r + wh <= h; ++r) {
        for (int c = 0; c + ww <= w; ++c) {
            auto xb = x.block(r, c, wh, ww);
            auto yb = y.block(r, c, wh, ww);
            const double mx = xb.sum() * inv_n;
            const double my = yb.sum() * inv_n;
            const double xx = xb.cwiseProduct(xb).sum() * inv_n - mx * mx;
            const double yy = yb.cwiseProduct(yb).sum() * inv_n - my * my;
            const double xy = xb.cwiseProduct(yb).sum() * inv_n - mx * my;
            const double num = (2.0 * mx * my + c1) * (2.0 * xy + c2);
            const double den = (mx * mx + my * my + c1) * (xx + yy + c2);
            total += num / den;
            ++windows;
        }
    }
    return total / windows;
}
}  // namespace

double ssim(const Tensor& x, const Tensor& y, double dynamic_range) {
    require(x.shape == y.shape, Errc::shape_mismatch,
            "ssim: shapes " + shape_str(x.shape) + " vs " + shape_str(y.shape));
    require(x.rank() == 2 || x.rank() == 3, Errc::shape_mismatch,
            "ssim: expected (h,w) or (c,h,w), got " + shape_str(x.shape));
    const int channels = x.rank() == 3 ? x.shape[0] : 1;
    const int h = x.rank() == 3 ? x.shape[1] : x.shape[0];
    const int w = x.rank() == 3 ? x.shape[2] : x.shape[1];
    const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
    const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);

    double total = 0.0;
    const int64_t per = static_cast<int64_t>(h) * w;
    for (int ch = 0; ch < channels; ++ch) {
        Eigen::MatrixXd xm(h, w), ym(h, w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                xm(r, c) = x.data[static_cast<size_t>(ch * per + r * w + c)];
                ym(r, c) = y.data[static_cast<size_t>(ch * per + r * w + c)];
            }
        total += ssim_channel(xm, ym, c1, c2);
    }
    return total / channels;
}

FeatureStats feature_stats(const Eigen::MatrixXd& rows) {
    require(rows.rows() >= 2, Errc::too_few_images,
            "feature_stats: need >= 2 samples for a covariance, got " +
                std::to_string(rows.rows()));
    FeatureStats s;
    s.n = rows.rows();
    s.mu = rows.colwise().mean().transpose();
    Eigen::MatrixXd centered = rows.rowwise() - s.mu.transpose();
    s.sigma = (centered.transpose() * centered) / static_cast<double>(s.n - 1);
    s.sigma = 0.5 * (s.sigma + s.sigma.transpose().eval());  // exact symmetry
    return s;
}

namespace {
// PSD square root via eigendecomposition; small negatives clipped, real
// negatives rejected.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
    require((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-8, Errc::non_psd,
            std::string(what) + ": matrix not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        require(ev[i] >= -1e-8, Errc::non_psd,
                std::string(what) + ": eigenvalue " + std::to_string(ev[i]) + " < -1e-8");
        ev[i] = std::sqrt(std::max(ev[i], 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace

double frechet_distance(const FeatureStats& s1, const FeatureStats& s2) {
    require(s1.mu.size() == s2.mu.size(), Errc::dim_mismatch,
            "frechet: dims " + std::to_string(s1.mu.size()) + " vs " +
                std::to_string(s2.mu.size()));
    require(s1.sigma.rows() == s1.mu.size() && s2.sigma.rows() == s2.mu.size(),
            Errc::dim_mismatch, "frechet: covariance dim mismatch");

    Eigen::MatrixXd root1 = psd_sqrt(s1.sigma, "frechet sigma1");
    Eigen::MatrixXd inner = root1 * s2.sigma * root1;
    inner = 0.5 * (inner + inner.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const double ev = es.eigenvalues()[i];
        require(ev >= -1e-8, Errc::non_psd,
                "frechet: product eigenvalue " + std::to_string(ev) + " < -1e-8");
        tr_sqrt += std::sqrt(std::max(ev, 0.0));
    }
    const double fd = (s1.mu - s2.mu).squaredNorm() + s1.sigma.trace() + s2.sigma.trace() -
                      2.0 * tr_sqrt;
    return std::max(fd, 0.0);
}

double perceptual_distance(const Embedder& embedder, const Tensor& x, const Tensor& y) {
    return (embedder.image_embed(x) - embedder.image_embed(y)).norm();
}

DiversitySummary diversity_summary(const Embedder& embedder,
                                   const std::vector<Tensor>& images) {
    require(images.size() >= 2, Errc::too_few_images,
            "diversity_summary: need >= 2 images, got " + std::to_string(images.size()));
    std::vector<Eigen::VectorXd> emb;
    emb.reserve(images.size());
    for (const Tensor& im : images) emb.push_back(embedder.image_embed(im));

    DiversitySummary out;
    int64_t pairs = 0;
    for (size_t i = 0; i < emb.size(); ++i)
        for (size_t j = i + 1; j < emb.size(); ++j) {
            out.mean_pairwise_distance += (emb[i] - emb[j]).norm();
            ++pairs;
        }
    out.mean_pairwise_distance /= static_cast<double>(pairs);

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(emb.front().size());
    for (const auto& e : emb) mean += e;
    mean /= static_cast<double>(emb.size());
    for (const auto& e : emb) out.embedding_trace_variance += (e - mean).squaredNorm();
    out.embedding_trace_variance /= static_cast<double>(emb.size());
    return out;
}

const std::vector<std::string>& known_metrics() {
    static const std::vector<std::string> names{"alignment", "ssim", "frechet", "perceptual",
                                               "diversity"};
    return names;
}

bool is_known_metric(const std::string& name) {
    const auto& names = known_metrics();
    return std::find(names.begin(), names.end(), name) != names.end();
}

}  // namespace dreamreader
