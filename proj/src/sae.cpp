// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#include "dreamreader/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dreamreader/errors.hpp"
#include "dreamreader/fileio.hpp"
#include "dreamreader/optim.hpp"
#include "dreamreader/rng.hpp"

namespace dreamreader {
namespace {

// Indices of the k largest entries of a; equal values keep the lower index.
std::vector<int> topk_indices(const Eigen::VectorXd& a, int k) {
    const int m = static_cast<int>(a.size());
    k = std::min(k, m);
    std::vector<int> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int i, int j) {
        if (a[i] != a[j]) return a[i] > a[j];
        return i < j;
    });
    idx.resize(k);
    return idx;
}

Eigen::VectorXd relu_topk(const Eigen::VectorXd& pre, int k) {
    Eigen::VectorXd a = pre.cwiseMax(0.0);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(a.size());
    for (int i : topk_indices(a, k)) z[i] = a[i];
    return z;
}

double full_loss(const Eigen::MatrixXd& x, const SAEBundle& b) {
    const auto n = x.rows();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd xi = x.row(i).transpose();
        Eigen::VectorXd rec = sae_decode(b, sae_encode(b, xi));
        total += (rec - xi).squaredNorm();
    }
    return total / static_cast<double>(n);
}

}  // namespace

Eigen::VectorXd sae_encode(const SAEBundle& b, const Eigen::VectorXd& x) {
    require(x.size() == b.d, Errc::dim_mismatch,
            "sae_encode: input dim " + std::to_string(x.size()) + " != d " +
                std::to_string(b.d));
    Eigen::VectorXd pre = b.w_enc * (x - b.b_dec) + b.b_enc;
    return relu_topk(pre, b.k);
}

Eigen::VectorXd sae_decode(const SAEBundle& b, const Eigen::VectorXd& z) {
    require(z.size() == b.m, Errc::dim_mismatch,
            "sae_decode: code dim " + std::to_string(z.size()) + " != m " +
                std::to_string(b.m));
    return b.w_dec * z + b.b_dec;
}

Eigen::VectorXd sae_edit_apply(const SAEBundle& b, const std::vector<FeatureEdit>& edits,
                               const Eigen::VectorXd& x) {
    Eigen::VectorXd z = sae_encode(b, x);
    for (const FeatureEdit& e : edits) {
        require(e.index >= 0 && e.index < b.m, Errc::index_out_of_range,
                "feature edit index " + std::to_string(e.index) + " outside [0, " +
                    std::to_string(b.m) + ")");
        if (e.mode == FeatureEdit::Mode::ablate)
            z[e.index] = 0.0;
        else
            z[e.index] *= e.factor;
    }
    return sae_decode(b, z);
}

SAEBundle train_sae(SampleStream& stream, int d, int m, int k, const SAEHyperparams& hp) {
    if (hp.variant == SAEVariant::gated)
        fail(Errc::not_implemented, "SAE variant 'gated' is a declared extension point");
    if (hp.variant == SAEVariant::matryoshka)
        fail(Errc::not_implemented, "SAE variant 'matryoshka' is a declared extension point");
    require(d >= 1 && m >= 1, Errc::dim_mismatch, "train_sae: d and m must be positive");
    require(k >= 1 && k <= m, Errc::dim_mismatch,
            "train_sae: need 1 <= k <= m, got k=" + std::to_string(k) + " m=" +
                std::to_string(m));

    stream.reset();
    std::vector<ActivationSample> samples;
    while (auto s = stream.next()) {
        require(s->x.size() == d, Errc::dim_mismatch,
                "train_sae: sample dim " + std::to_string(s->x.size()) + " != d " +
                    std::to_string(d));
        samples.push_back(std::move(*s));
    }
    require(!samples.empty(), Errc::empty_set, "train_sae: activation stream is empty");
    const int n = static_cast<int>(samples.size());

    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i) x.row(i) = samples[i].x.cast<double>().transpose();

    SAEBundle b;
    b.d = d;
    b.m = m;
    b.k = k;
    SeededRng init_rng(mix_seed(hp.seed, "sae_init"));
    b.w_dec = normal_matrix<double>(init_rng, d, m, 1.0);
    for (int j = 0; j < m; ++j) {
        double nrm = b.w_dec.col(j).norm();
        if (nrm > 1e-12) b.w_dec.col(j) /= nrm;
    }
    b.w_enc = b.w_dec.transpose();  // tied init
    b.b_enc = Eigen::VectorXd::Zero(m);
    b.b_dec = x.colwise().mean().transpose();
    b.stats.activation_source = hp.activation_source;

    b.stats.initial_loss = full_loss(x, b);

    // Bias vectors live in one-column matrices so Adam sees a uniform shape.
    Eigen::MatrixXd b_enc_m = b.b_enc;
    Eigen::MatrixXd b_dec_m = b.b_dec;
    AdamOptimizer opt(hp.learning_rate);
    opt.add_param(&b.w_enc);
    opt.add_param(&b_enc_m);
    opt.add_param(&b.w_dec);
    opt.add_param(&b_dec_m);

    const int batch = std::min(hp.batch_size, n);
    SeededRng batch_rng(mix_seed(hp.seed, "sae_batch"));
    std::vector<int64_t> perm = random_permutation(batch_rng, n);
    size_t cursor = 0;

    for (int step = 0; step < hp.steps; ++step) {
        std::vector<int> rows(batch);
        for (int i = 0; i < batch; ++i) {
            if (cursor >= perm.size()) {
                perm = random_permutation(batch_rng, n);
                cursor = 0;
            }
            rows[i] = static_cast<int>(perm[cursor++]);
        }

        b.b_enc = b_enc_m.col(0);
        b.b_dec = b_dec_m.col(0);

        Eigen::MatrixXd g_wenc = Eigen::MatrixXd::Zero(m, d);
        Eigen::MatrixXd g_benc = Eigen::MatrixXd::Zero(m, 1);
        Eigen::MatrixXd g_wdec = Eigen::MatrixXd::Zero(d, m);
        Eigen::MatrixXd g_bdec = Eigen::MatrixXd::Zero(d, 1);
        const double scale = 2.0 / static_cast<double>(batch);

        for (int r : rows) {
            Eigen::VectorXd xi = x.row(r).transpose();
            Eigen::VectorXd xc = xi - b.b_dec;
            Eigen::VectorXd pre = b.w_enc * xc + b.b_enc;
            Eigen::VectorXd z = relu_topk(pre, k);
            Eigen::VectorXd err = b.w_dec * z + b.b_dec - xi;

            Eigen::VectorXd g_z = scale * (b.w_dec.transpose() * err);
            // Gradient flows only through kept features; ReLU gate is implied
            // because kept entries are the positive pre-activations.
            Eigen::VectorXd g_pre = Eigen::VectorXd::Zero(m);
            for (int j = 0; j < m; ++j)
                if (z[j] > 0.0) g_pre[j] = g_z[j];

            g_wdec.noalias() += scale * (err * z.transpose());
            g_bdec.col(0) += scale * err;
            g_wenc.noalias() += g_pre * xc.transpose();
            g_benc.col(0) += g_pre;
            g_bdec.col(0) -= b.w_enc.transpose() * g_pre;  // encoder centering path
        }

        opt.step({g_wenc, g_benc, g_wdec, g_bdec});
        b.b_enc = b_enc_m.col(0);
        b.b_dec = b_dec_m.col(0);

        for (int j = 0; j < m; ++j) {
            double nrm = b.w_dec.col(j).norm();
            b.stats.max_col_norm_dev = std::max(b.stats.max_col_norm_dev, std::abs(nrm - 1.0));
            if (nrm > 1e-12) b.w_dec.col(j) /= nrm;
        }
    }

    b.b_enc = b_enc_m.col(0);
    b.b_dec = b_dec_m.col(0);
    for (int j = 0; j < m; ++j) {
        double nrm = b.w_dec.col(j).norm();
        if (nrm > 1e-12) b.w_dec.col(j) /= nrm;
    }

    b.stats.steps = hp.steps;
    b.stats.final_loss = full_loss(x, b);
    if (hp.steps > 0 && b.stats.initial_loss > 1e-12)
        require(b.stats.final_loss < b.stats.initial_loss, Errc::no_decrease,
                "train_sae: loss did not decrease (" + std::to_string(b.stats.initial_loss) +
                    " -> " + std::to_string(b.stats.final_loss) + ")");

    // Dead features: no activation across the trailing window of the stream,
    // judged with the final parameters.
    const int window = std::min(hp.dead_window, n);
    std::vector<bool> alive(m, false);
    for (int i = n - window; i < n; ++i) {
        Eigen::VectorXd z = sae_encode(b, x.row(i).transpose());
        for (int j = 0; j < m; ++j)
            if (z[j] != 0.0) alive[j] = true;
    }
    int dead = 0;
    for (int j = 0; j < m; ++j)
        if (!alive[j]) ++dead;
    b.stats.dead_feature_rate = static_cast<double>(dead) / static_cast<double>(m);
    return b;
}

std::vector<FeatureCard> build_feature_cards(const SAEBundle& b, SampleStream& stream,
                                             int top_n) {
    require(top_n >= 0, Errc::index_out_of_range, "build_feature_cards: top_n must be >= 0");
    std::vector<FeatureCard> cards(b.m);
    for (int j = 0; j < b.m; ++j) cards[j].feature = j;
    std::vector<double> sums(b.m, 0.0);
    std::vector<int64_t> nonzero(b.m, 0);
    int64_t n = 0;

    stream.reset();
    while (auto s = stream.next()) {
        Eigen::VectorXd z = sae_encode(b, s->x.cast<double>());
        for (int j = 0; j < b.m; ++j) {
            sums[j] += z[j];
            if (z[j] != 0.0) {
                ++nonzero[j];
                cards[j].top.push_back({s->prompt_id, s->timestep, z[j]});
            }
        }
        ++n;
    }

    for (int j = 0; j < b.m; ++j) {
        auto& c = cards[j];
        std::stable_sort(c.top.begin(), c.top.end(),
                         [](const FeatureCard::Hit& a, const FeatureCard::Hit& b2) {
                             return a.value > b2.value;
                         });
        if (static_cast<int>(c.top.size()) > top_n) c.top.resize(top_n);
        c.mean_activation = n > 0 ? sums[j] / static_cast<double>(n) : 0.0;
        c.frequency = n > 0 ? static_cast<double>(nonzero[j]) / static_cast<double>(n) : 0.0;
        c.dead = nonzero[j] == 0;
    }
    return cards;
}

namespace {
constexpr char kSaeMagic[7] = "DRSAE1";

std::vector<float> matrix_block(const Eigen::MatrixXd& m) {
    std::vector<float> out(static_cast<size_t>(m.rows()) * static_cast<size_t>(m.cols()));
    size_t p = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[p++] = static_cast<float>(m(r, c));
    return out;
}

Eigen::MatrixXd block_matrix(const float* data, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    size_t p = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = data[p++];
    return m;
}
}  // namespace

void save_sae(const SAEBundle& b, const std::filesystem::path& path) {
    nlohmann::json header{
        {"format", "drsae"},
        {"dtype", "f32"},
        {"d", b.d},
        {"m", b.m},
        {"k", b.k},
        {"source_site", b.source_site},
        {"blocks", {"w_enc", "b_enc", "w_dec", "b_dec"}},
        {"stats",
         {{"steps", b.stats.steps},
          {"initial_loss", b.stats.initial_loss},
          {"final_loss", b.stats.final_loss},
          {"dead_feature_rate", b.stats.dead_feature_rate},
          {"max_col_norm_dev", b.stats.max_col_norm_dev},
          {"activation_source", b.stats.activation_source}}},
    };
    std::vector<float> w_enc = matrix_block(b.w_enc);
    std::vector<float> b_enc = matrix_block(b.b_enc);
    std::vector<float> w_dec = matrix_block(b.w_dec);
    std::vector<float> b_dec = matrix_block(b.b_dec);
    write_envelope(path, kSaeMagic, header, {&w_enc, &b_enc, &w_dec, &b_dec});
}

SAEBundle load_sae(const std::filesystem::path& path) {
    RawEnvelope env = read_envelope(path, kSaeMagic);
    const auto& h = env.header;
    require(h.contains("d") && h.contains("m") && h.contains("k"), Errc::corrupt_header,
            "drsae header missing dims: " + path.string());
    SAEBundle b;
    b.d = h.at("d").get<int>();
    b.m = h.at("m").get<int>();
    b.k = h.at("k").get<int>();
    b.source_site = h.value("source_site", std::string{});
    if (h.contains("stats")) {
        const auto& s = h.at("stats");
        b.stats.steps = s.value("steps", 0);
        b.stats.initial_loss = s.value("initial_loss", 0.0);
        b.stats.final_loss = s.value("final_loss", 0.0);
        b.stats.dead_feature_rate = s.value("dead_feature_rate", 0.0);
        b.stats.max_col_norm_dev = s.value("max_col_norm_dev", 0.0);
        b.stats.activation_source = s.value("activation_source", std::string{"raw"});
    }
    const int64_t md = static_cast<int64_t>(b.m) * b.d;
    auto blocks = split_blocks(env, {md, b.m, md, b.d});
    b.w_enc = block_matrix(blocks[0].data(), b.m, b.d);
    b.b_enc = block_matrix(blocks[1].data(), b.m, 1).col(0);
    b.w_dec = block_matrix(blocks[2].data(), b.d, b.m);
    b.b_dec = block_matrix(blocks[3].data(), b.d, 1).col(0);
    return b;
}

}  // namespace dreamreader
